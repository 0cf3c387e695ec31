// Copyright 2026 The muse-mil Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Category-conditioned text knowledge base: per-class banks of encoded
// multi-view descriptions with raw-text provenance, adapter-aligned top-m
// retrieval and shuffled-queue consumption.

#include <algorithm>
#include <filesystem>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "muse/data.hpp"
#include "muse/dsr.hpp"
#include "muse/error.hpp"
#include "muse/rng.hpp"

namespace muse {

// Text-to-feature encoder used when a knowledge base ships raw descriptions
// without precomputed banks.
struct TextEncoder {
  virtual ~TextEncoder() = default;
  virtual Eigen::RowVectorXf encode(const std::string& text) const = 0;
  virtual Eigen::Index dim() const = 0;
};

struct KnowledgeBase {
  struct Bank {
    MatF features;                   // T_c x d
    std::vector<std::string> texts;  // parallel raw descriptions
  };
  std::vector<Bank> banks;  // indexed by class label
  std::vector<std::string> class_names;
  Eigen::Index d = 0;
  std::string provenance = "ingested";  // ingested | synthetic

  void validate() const {
    if (banks.size() != class_names.size())
      throw DataError("knowledge base bank count does not match class names");
    for (std::size_t c = 0; c < banks.size(); ++c) {
      const auto& bank = banks[c];
      if (bank.features.rows() < 1)
        throw DataError("knowledge base for " + class_names[c] + " is empty");
      if (bank.features.cols() != d)
        throw DataError("knowledge base for " + class_names[c] + " has wrong dimension");
      if (static_cast<Eigen::Index>(bank.texts.size()) != bank.features.rows())
        throw DataError("knowledge base for " + class_names[c] +
                        ": raw-text count does not match bank rows");
      if (!bank.features.allFinite())
        throw DataError("knowledge base for " + class_names[c] + " has non-finite entries");
      for (Eigen::Index r = 0; r < bank.features.rows(); ++r)
        if (bank.features.row(r).isZero(0.0f))
          throw DataError("knowledge base for " + class_names[c] + " has an all-zero row");
    }
  }

  // Per-class mean of bank rows; the class-embedding vectors used to
  // initialize category semantics.
  Mat class_means() const {
    Mat out(static_cast<Eigen::Index>(banks.size()), d);
    for (std::size_t c = 0; c < banks.size(); ++c)
      out.row(static_cast<Eigen::Index>(c)) =
          banks[c].features.cast<double>().colwise().mean();
    return out;
  }
};

// Lightweight affine adapter aligning the semantic prior with the text
// feature space; identity at initialization.
struct Adapter {
  Mat weight;  // d x d
  RowVec bias;

  static Adapter identity(Eigen::Index d) {
    Adapter a;
    a.weight = Mat::Identity(d, d);
    a.bias = RowVec::Zero(d);
    return a;
  }

  RowVec apply(const RowVec& f) const {
    if (!f.allFinite()) throw DataError("adapter input has non-finite entries");
    return f * weight + bias;
  }
};

// --- on-disk layout ---------------------------------------------------------
// Per category: <class>.texts.json (array of strings), <class>.bank.bin and
// <class>.bank.json (binary matrix convention).

inline void save_kb(const KnowledgeBase& kb, const std::filesystem::path& dir) {
  kb.validate();
  std::filesystem::create_directories(dir);
  for (std::size_t c = 0; c < kb.class_names.size(); ++c) {
    const auto& name = kb.class_names[c];
    save_json(dir / (name + ".texts.json"), nlohmann::json(kb.banks[c].texts));
    write_matrix(dir / (name + ".bank.bin"), kb.banks[c].features);
    Sidecar sc{name, kb.banks[c].features.rows(), kb.d, static_cast<int>(c)};
    save_json(dir / (name + ".bank.json"), sc.to_json());
  }
  save_json(dir / "source.json", {{"provenance", kb.provenance}});
}

// Loads a knowledge base from a directory of per-category files. Precomputed
// banks are used when present; otherwise raw texts are encoded through the
// given encoder. Raw text with no encoder is a configuration error.
inline KnowledgeBase ingest_kb(const std::filesystem::path& dir,
                               const std::vector<std::string>& class_names,
                               Eigen::Index expected_d, const TextEncoder* encoder = nullptr) {
  if (!std::filesystem::is_directory(dir))
    throw DataError("knowledge base directory does not exist: " + dir.string());
  // Reject stray categories: every *.texts.json / *.bank.bin stem must be a
  // known class name.
  std::set<std::string> stems;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    auto fname = entry.path().filename().string();
    for (const char* suffix : {".texts.json", ".bank.bin"}) {
      if (fname.size() > std::strlen(suffix) &&
          fname.compare(fname.size() - std::strlen(suffix), std::string::npos, suffix) == 0)
        stems.insert(fname.substr(0, fname.size() - std::strlen(suffix)));
    }
  }
  std::set<std::string> known(class_names.begin(), class_names.end());
  for (const auto& s : stems)
    if (!known.count(s))
      throw DataError("knowledge base category '" + s + "' is not in the manifest class names");

  KnowledgeBase kb;
  kb.class_names = class_names;
  kb.d = expected_d;
  auto source = dir / "source.json";
  if (std::filesystem::exists(source))
    kb.provenance = load_json(source).value("provenance", "ingested");

  for (std::size_t c = 0; c < class_names.size(); ++c) {
    const auto& name = class_names[c];
    auto texts_path = dir / (name + ".texts.json");
    auto bank_path = dir / (name + ".bank.bin");
    KnowledgeBase::Bank bank;
    if (std::filesystem::exists(texts_path)) {
      bank.texts = load_json(texts_path).get<std::vector<std::string>>();
      if (bank.texts.empty())
        throw DataError("knowledge base for " + name + " has an empty description list");
    }
    if (std::filesystem::exists(bank_path)) {
      auto sc = Sidecar::from_json(load_json(sidecar_path(bank_path)));
      if (sc.d != expected_d)
        throw DataError("bank for " + name + " has d=" + std::to_string(sc.d) +
                        ", dataset d=" + std::to_string(expected_d));
      bank.features = read_matrix<MatF>(bank_path, sc.n, sc.d);
      if (!bank.texts.empty() &&
          static_cast<Eigen::Index>(bank.texts.size()) != bank.features.rows())
        throw DataError("bank for " + name + " does not match its raw-text count");
      if (bank.texts.empty()) bank.texts.assign(static_cast<std::size_t>(bank.features.rows()), "");
    } else if (!bank.texts.empty()) {
      if (encoder == nullptr)
        throw ConfigError("knowledge base for " + name +
                          " ships raw text only; configure a text encoder "
                          "(e.g. the synthetic encoder) to build feature banks");
      if (encoder->dim() != expected_d)
        throw ConfigError("text encoder dimension does not match dataset d");
      bank.features.resize(static_cast<Eigen::Index>(bank.texts.size()), expected_d);
      for (std::size_t t = 0; t < bank.texts.size(); ++t)
        bank.features.row(static_cast<Eigen::Index>(t)) = encoder->encode(bank.texts[t]);
    } else {
      throw DataError("knowledge base has no entry for class " + name);
    }
    kb.banks.push_back(std::move(bank));
  }
  kb.validate();
  return kb;
}

// --- retrieval ---------------------------------------------------------------

enum class RetrievalStrategy { cosine, l2, random };

inline RetrievalStrategy retrieval_from_string(const std::string& s) {
  if (s == "cosine") return RetrievalStrategy::cosine;
  if (s == "l2") return RetrievalStrategy::l2;
  if (s == "random") return RetrievalStrategy::random;
  throw ConfigError("unknown retrieval strategy: " + s);
}

inline std::string to_string(RetrievalStrategy s) {
  switch (s) {
    case RetrievalStrategy::cosine: return "cosine";
    case RetrievalStrategy::l2: return "l2";
    case RetrievalStrategy::random: return "random";
  }
  throw InternalError("bad retrieval strategy");
}

// Seeded-shuffle queue over the retrieved set; single consumer, each entry
// dequeued exactly once per pass.
struct RetrievalQueue {
  struct Item {
    RowVec feature;
    int bank_index = -1;
  };
  std::vector<Item> items;
  std::size_t cursor = 0;
  std::uint64_t shuffle_seed = 0;

  std::size_t size() const { return items.size(); }
  std::size_t remaining() const { return items.size() - cursor; }

  std::optional<Item> dequeue() {
    if (cursor >= items.size()) return std::nullopt;
    return items[cursor++];
  }

  RowVec mean_feature() const {
    if (items.empty()) throw InternalError("mean of an empty retrieval queue");
    RowVec acc = RowVec::Zero(items.front().feature.size());
    for (const auto& it : items) acc += it.feature;
    return acc / static_cast<double>(items.size());
  }
};

// Top-m retrieval from the labeled class bank. Cosine ranks by descending
// cos(A(f), t); l2 by ascending distance; random draws uniformly without
// replacement. Ties break toward the lower bank index. The retrieved set is
// stored in a seeded-shuffled queue.
inline RetrievalQueue retrieve(const RowVec& prior, const KnowledgeBase& kb, int label, int m,
                               RetrievalStrategy strategy, const Adapter& adapter,
                               std::uint64_t seed) {
  if (m < 1) throw ConfigError("retrieval count m must be >= 1");
  if (label < 0 || label >= static_cast<int>(kb.banks.size()))
    throw DataError("retrieve: unknown category label " + std::to_string(label));
  const auto& bank = kb.banks[static_cast<std::size_t>(label)];
  const Eigen::Index rows = bank.features.rows();
  if (m > rows) {
    log_warn("retrieval m=" + std::to_string(m) + " exceeds bank size " + std::to_string(rows) +
             " for class " + kb.class_names[static_cast<std::size_t>(label)] + "; clamping");
    m = static_cast<int>(rows);
  }

  std::vector<int> picked;
  if (strategy == RetrievalStrategy::random) {
    Rng rng(derive_seed(seed, "retrieve/random"));
    auto idx = rng.sample_without_replacement(static_cast<std::size_t>(rows),
                                              static_cast<std::size_t>(m));
    picked.assign(idx.begin(), idx.end());
  } else {
    RowVec query = adapter.apply(prior);
    RetrievalStrategy effective = strategy;
    if (strategy == RetrievalStrategy::cosine && query.norm() == 0.0) {
      log_warn("adapted query has zero norm; falling back to l2 retrieval");
      effective = RetrievalStrategy::l2;
    }
    std::vector<double> score(static_cast<std::size_t>(rows));
    for (Eigen::Index r = 0; r < rows; ++r) {
      RowVec t = bank.features.row(r).cast<double>();
      if (effective == RetrievalStrategy::cosine) {
        score[static_cast<std::size_t>(r)] = query.dot(t) / (query.norm() * t.norm());
      } else {
        score[static_cast<std::size_t>(r)] = -(query - t).norm();  // higher is closer
      }
    }
    std::vector<int> order(static_cast<std::size_t>(rows));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      double sa = score[static_cast<std::size_t>(a)], sb = score[static_cast<std::size_t>(b)];
      if (sa != sb) return sa > sb;
      return a < b;
    });
    picked.assign(order.begin(), order.begin() + m);
  }

  RetrievalQueue queue;
  queue.shuffle_seed = seed;
  for (int i : picked)
    queue.items.push_back({bank.features.row(i).cast<double>(), i});
  Rng rng(derive_seed(seed, "retrieve/shuffle"));
  rng.shuffle(queue.items);
  return queue;
}

}  // namespace muse
