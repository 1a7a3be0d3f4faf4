#pragma once

// Resolved configuration of one CLI run plus the manifest written beside its outputs.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cfrec/data.hpp"
#include "cfrec/explain.hpp"
#include "cfrec/influence.hpp"
#include "cfrec/model.hpp"

namespace cfrec::cli {

// Exactly one source is set after validation.
struct DatasetSpec {
  std::optional<std::string> canonical;  // CSV written by `ingest`
  std::optional<std::string> movielens;  // raw tab-separated ratings
  std::optional<SynthConfig> synthetic;  // its seed is derived from the run seed
  std::size_t min_actions = 0;           // 0 disables the filter
};

struct EvalSpec {
  std::size_t n_users = 100;
  std::vector<std::size_t> ks{5};
  std::vector<std::size_t> dims{8, 16, 20, 24, 28, 32};
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::size_t threads = 1;
  std::string out = "run";
  DatasetSpec dataset;
  ModelKind model = ModelKind::ncf;
  TrainConfig train;  // seed field is ignored; it is derived from `seed`
  InfluenceConfig influence;
  SearchAlgorithm algorithm = SearchAlgorithm::iterative_greedy;
  std::optional<std::size_t> max_removals;
  EvalSpec eval;
  std::optional<std::string> checkpoint;
  std::optional<std::string> explanations;
  std::optional<std::string> label;
  bool dump_influence = false;

  // Checks value ranges and that every referenced path exists.
  void validate() const;

  TrainConfig resolved_train() const;
  std::string resolved_label() const;
};

nlohmann::json to_json(const RunConfig& cfg);

// Starts from defaults and applies every key present; unknown keys are rejected.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

Dataset load_dataset(const RunConfig& cfg);

std::string sha256_file(const std::filesystem::path& path);

struct Manifest {
  std::string command;
  nlohmann::json config;
  std::vector<std::filesystem::path> inputs;
  std::vector<std::filesystem::path> outputs;  // relative to the output directory
};

void write_manifest(const Manifest& m, const std::filesystem::path& out_dir);

}  // namespace cfrec::cli
