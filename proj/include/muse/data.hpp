// Copyright 2026 The muse-mil Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Dataset model: patch-feature bags, manifests and few-shot sampling.
// One slide = one .bin of raw float32 features plus a .json sidecar.

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "muse/error.hpp"
#include "muse/rng.hpp"
#include "muse/tensor_io.hpp"

namespace muse {

struct PatchBag {
  std::string slide_id;
  MatF features;  // N x d
  int label = -1;

  Eigen::Index n() const { return features.rows(); }
  Eigen::Index d() const { return features.cols(); }

  void validate() const {
    if (features.rows() < 1 || features.cols() < 1)
      throw DataError("bag " + slide_id + ": empty feature matrix");
    if (!features.allFinite())
      throw DataError("bag " + slide_id + ": non-finite feature values");
  }
};

enum class Split { train, val, test };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  throw InternalError("bad split tag");
}

inline Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw FormatError("unknown split tag: " + s);
}

struct ManifestEntry {
  std::string slide_id;
  std::string path;  // relative to the manifest directory
  int label = -1;
  Split split = Split::train;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::vector<std::string> class_names;
  Eigen::Index d = 0;
  std::filesystem::path root;  // directory containing the manifest, not serialized

  int num_classes() const { return static_cast<int>(class_names.size()); }

  std::vector<const ManifestEntry*> split_entries(Split s) const {
    std::vector<const ManifestEntry*> out;
    for (const auto& e : entries)
      if (e.split == s) out.push_back(&e);
    return out;
  }

  const ManifestEntry& find(const std::string& slide_id) const {
    for (const auto& e : entries)
      if (e.slide_id == slide_id) return e;
    throw DataError("slide id not in manifest: " + slide_id);
  }

  nlohmann::json to_json() const {
    nlohmann::json entries_j = nlohmann::json::array();
    for (const auto& e : entries) {
      entries_j.push_back({{"slide_id", e.slide_id},
                           {"path", e.path},
                           {"label", e.label},
                           {"split", to_string(e.split)}});
    }
    return {{"class_names", class_names}, {"d", d}, {"entries", entries_j}};
  }

  static DatasetManifest from_json(const nlohmann::json& j, std::filesystem::path root_dir) {
    DatasetManifest m;
    m.class_names = j.at("class_names").get<std::vector<std::string>>();
    m.d = j.at("d").get<Eigen::Index>();
    m.root = std::move(root_dir);
    for (const auto& e : j.at("entries")) {
      ManifestEntry entry;
      entry.slide_id = e.at("slide_id").get<std::string>();
      entry.path = e.at("path").get<std::string>();
      entry.label = e.at("label").get<int>();
      entry.split = split_from_string(e.at("split").get<std::string>());
      m.entries.push_back(std::move(entry));
    }
    return m;
  }

  // Structural invariants: unique ids, labels in range, every class present in
  // every split. File existence is checked separately (validate_files) so that
  // in-memory manifests can be built before anything is on disk.
  void validate() const {
    if (class_names.size() < 2) throw DataError("manifest needs at least 2 classes");
    if (d < 1) throw DataError("manifest declares non-positive d");
    std::set<std::string> ids;
    std::map<int, std::set<Split>> class_splits;
    for (const auto& e : entries) {
      if (!ids.insert(e.slide_id).second)
        throw DataError("duplicate slide id: " + e.slide_id);
      if (e.label < 0 || e.label >= num_classes())
        throw DataError("slide " + e.slide_id + ": label out of range");
      class_splits[e.label].insert(e.split);
    }
    for (int c = 0; c < num_classes(); ++c) {
      if (class_splits[c].size() != 3)
        throw DataError("class " + class_names[c] + " missing from some split");
    }
  }

  void validate_files() const {
    for (const auto& e : entries) {
      auto bin = root / e.path;
      auto side = sidecar_path(bin);
      if (!std::filesystem::exists(bin)) throw DataError("missing bag file: " + bin.string());
      if (!std::filesystem::exists(side)) throw DataError("missing sidecar: " + side.string());
      auto sc = Sidecar::from_json(load_json(side));
      if (sc.d != d)
        throw DataError("bag " + e.slide_id + ": sidecar d=" + std::to_string(sc.d) +
                        " does not match manifest d=" + std::to_string(d));
    }
  }
};

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  auto m = DatasetManifest::from_json(load_json(path), path.parent_path());
  m.validate();
  return m;
}

inline void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  save_json(path, m.to_json());
}

// --- feature bag I/O ------------------------------------------------------

inline PatchBag read_feature_bag(const std::filesystem::path& bin,
                                 const std::filesystem::path& sidecar) {
  auto sc = Sidecar::from_json(load_json(sidecar));
  PatchBag bag;
  bag.slide_id = sc.slide_id;
  bag.label = sc.label;
  bag.features = read_matrix<MatF>(bin, sc.n, sc.d);
  bag.validate();
  return bag;
}

inline PatchBag read_feature_bag(const std::filesystem::path& bin) {
  return read_feature_bag(bin, sidecar_path(bin));
}

inline Sidecar write_feature_bag(const PatchBag& bag, const std::filesystem::path& bin) {
  bag.validate();
  write_matrix(bin, bag.features);
  Sidecar sc{bag.slide_id, bag.n(), bag.d(), bag.label};
  save_json(sidecar_path(bin), sc.to_json());
  return sc;
}

inline PatchBag load_bag(const DatasetManifest& m, const ManifestEntry& e) {
  auto bag = read_feature_bag(m.root / e.path);
  if (bag.d() != m.d)
    throw DataError("bag " + e.slide_id + ": d mismatch with manifest");
  return bag;
}

// --- split assignment ------------------------------------------------------

// Stable 6:2:2 assignment: within each class, slides are ordered by
// fnv1a(slide_id # seed) and cut at floor(0.6 n) / floor(0.2 n). Stratified by
// class so every class appears in every split.
inline std::map<std::string, Split> assign_splits(
    const std::vector<std::pair<std::string, int>>& id_labels, std::uint64_t seed) {
  std::map<int, std::vector<std::string>> per_class;
  for (const auto& [id, label] : id_labels) per_class[label].push_back(id);
  std::map<std::string, Split> out;
  for (auto& [label, ids] : per_class) {
    std::sort(ids.begin(), ids.end(), [seed](const std::string& a, const std::string& b) {
      auto ha = fnv1a64(a + "#" + std::to_string(seed));
      auto hb = fnv1a64(b + "#" + std::to_string(seed));
      return ha != hb ? ha < hb : a < b;
    });
    std::size_t n = ids.size();
    std::size_t n_train = static_cast<std::size_t>(0.6 * static_cast<double>(n));
    std::size_t n_val = static_cast<std::size_t>(0.2 * static_cast<double>(n));
    for (std::size_t i = 0; i < n; ++i) {
      Split s = i < n_train ? Split::train : (i < n_train + n_val ? Split::val : Split::test);
      out[ids[i]] = s;
    }
  }
  return out;
}

// --- few-shot sampling ------------------------------------------------------

struct FewShotSubset {
  std::vector<std::vector<std::string>> ids_per_class;  // indexed by label
  int k = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> warnings;

  std::vector<std::string> all_ids() const {
    std::vector<std::string> out;
    for (const auto& ids : ids_per_class) out.insert(out.end(), ids.begin(), ids.end());
    return out;
  }
};

// Draws k train slides per class, deterministically in (manifest, k, seed).
// Classes with fewer than k train slides are clamped with a warning.
inline FewShotSubset sample_few_shot(const DatasetManifest& manifest, int k,
                                     std::uint64_t seed) {
  if (k < 1) throw ConfigError("few-shot k must be >= 1");
  FewShotSubset subset;
  subset.k = k;
  subset.seed = seed;
  subset.ids_per_class.resize(manifest.class_names.size());
  std::vector<std::vector<std::string>> train_ids(manifest.class_names.size());
  for (const auto& e : manifest.entries)
    if (e.split == Split::train) train_ids[e.label].push_back(e.slide_id);
  for (std::size_t c = 0; c < train_ids.size(); ++c) {
    auto& ids = train_ids[c];
    if (ids.empty())
      throw DataError("class " + manifest.class_names[c] + " has no train slides");
    std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(k), ids.size());
    if (take < static_cast<std::size_t>(k)) {
      std::string w = "class " + manifest.class_names[c] + ": only " +
                      std::to_string(ids.size()) + " train slides, clamping k=" +
                      std::to_string(k);
      log_warn(w);
      subset.warnings.push_back(w);
    }
    Rng rng(derive_seed(seed, "fewshot/class=" + std::to_string(c)));
    auto picks = rng.sample_without_replacement(ids.size(), take);
    std::sort(picks.begin(), picks.end());
    for (auto i : picks) subset.ids_per_class[c].push_back(ids[i]);
  }
  return subset;
}

}  // namespace muse
