#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include "rehar/data.hpp"
#include "rehar/model.hpp"
#include "rehar/optical_flow.hpp"
#include "rehar/training.hpp"

namespace rehar {

struct PathsConfig {
  std::string data_dir = "data";
  std::string checkpoint = "model.rhar";
  std::string output_dir = "out";
};

// Everything a run needs. Stored as flat `key = value` text grouped under
// [model] [backbone] [training] [flow] [synth] [paths]; unknown sections and
// keys are rejected.
struct RunConfig {
  ModelConfig model;
  TrainingConfig training;
  FlowParams flow;
  SynthConfig synth;
  PathsConfig paths;

  void validate() const;
};

RunConfig parse_run_config(std::istream& in, const std::string& source = "<config>");
RunConfig load_run_config(const std::filesystem::path& path);

// Every key is written; numbers in shortest round-trip form, so
// parse(serialize(c)) == c.
std::string serialize_run_config(const RunConfig& config);

// One commented line per key with its default value.
std::string run_config_reference();

bool operator==(const RunConfig& a, const RunConfig& b);

}  // namespace rehar
