#pragma once

#include <string>

#include "hyperimts/model.hpp"
#include "hyperimts/training.hpp"

namespace hyperimts {

/// Everything one experiment needs: dataset location, split protocol, model
/// and training settings. Stored as a line-based key=value file.
struct RunConfig {
  std::string dataset;
  std::string out_dir = "out";
  std::uint64_t split_seed = 7;
  bool normalize_data = true;
  ModelConfig model;
  TrainConfig train;

  bool operator==(const RunConfig& other) const;
};

/// Parses a key=value document. Blank lines and '#' comments are skipped;
/// unknown keys are rejected with their line number. Every accepted document
/// round-trips through write_run_config.
RunConfig parse_run_config(const std::string& text);

RunConfig load_run_config(const std::string& path);

/// Canonical writer: fixed key order, one key per line.
std::string write_run_config(const RunConfig& config);

}  // namespace hyperimts
