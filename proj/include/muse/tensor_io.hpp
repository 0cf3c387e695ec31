// Copyright 2026 The muse-mil Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Binary tensor convention shared by feature bags, knowledge-base banks and
// checkpoints: raw little-endian scalars, row-major, one matrix per file,
// with a JSON sidecar describing the shape.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include <Eigen/Dense>
#include <json.hpp>

#include "muse/error.hpp"

namespace muse {

using MatF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace detail {

template <typename Scalar>
void swap_bytes(Scalar& v) {
  auto* p = reinterpret_cast<unsigned char*>(&v);
  for (std::size_t i = 0, j = sizeof(Scalar) - 1; i < j; ++i, --j) std::swap(p[i], p[j]);
}

template <typename Scalar>
void to_little_endian(Scalar* data, std::size_t count) {
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < count; ++i) swap_bytes(data[i]);
  } else {
    (void)data;
    (void)count;
  }
}

}  // namespace detail

template <typename Mat>
void write_matrix(const std::filesystem::path& path, const Mat& m) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  using Scalar = typename Mat::Scalar;
  // Row-major copy so the on-disk layout is independent of Eigen's storage order.
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = m;
  detail::to_little_endian(rm.data(), static_cast<std::size_t>(rm.size()));
  out.write(reinterpret_cast<const char*>(rm.data()),
            static_cast<std::streamsize>(sizeof(Scalar) * rm.size()));
  if (!out) throw DataError("short write: " + path.string());
}

template <typename Mat>
Mat read_matrix(const std::filesystem::path& path, Eigen::Index rows, Eigen::Index cols) {
  using Scalar = typename Mat::Scalar;
  std::error_code ec;
  auto size = std::filesystem::file_size(path, ec);
  if (ec) throw DataError("cannot stat: " + path.string());
  const std::uintmax_t expected =
      static_cast<std::uintmax_t>(rows) * static_cast<std::uintmax_t>(cols) * sizeof(Scalar);
  if (size != expected) {
    throw FormatError(path.string() + ": file holds " + std::to_string(size) +
                      " bytes, sidecar declares " + std::to_string(expected));
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path.string());
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(rows, cols);
  in.read(reinterpret_cast<char*>(rm.data()), static_cast<std::streamsize>(expected));
  if (!in) throw FormatError("short read: " + path.string());
  detail::to_little_endian(rm.data(), static_cast<std::size_t>(rm.size()));
  return rm;
}

inline nlohmann::json load_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return j;
}

inline void save_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  out << j.dump(2) << "\n";
}

// Sidecar for one binary matrix.
struct Sidecar {
  std::string slide_id;
  Eigen::Index n = 0;
  Eigen::Index d = 0;
  int label = -1;

  nlohmann::json to_json() const {
    return {{"slide_id", slide_id}, {"n", n}, {"d", d}, {"label", label}};
  }
  static Sidecar from_json(const nlohmann::json& j) {
    Sidecar s;
    s.slide_id = j.at("slide_id").get<std::string>();
    s.n = j.at("n").get<Eigen::Index>();
    s.d = j.at("d").get<Eigen::Index>();
    s.label = j.at("label").get<int>();
    if (s.n < 1 || s.d < 1) throw FormatError("sidecar declares non-positive shape");
    return s;
  }
};

inline std::filesystem::path sidecar_path(const std::filesystem::path& bin) {
  std::filesystem::path p = bin;
  p.replace_extension(".json");
  return p;
}

}  // namespace muse
