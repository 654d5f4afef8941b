#pragma once

// JSON configuration for the network, the trainer and the command-line
// harness. Parsing is strict: unknown keys and mistyped values are rejected
// with a FormatError naming the key.

#include <string>

#include "json.hpp"

#include "clnet/network.hpp"
#include "clnet/synthetic.hpp"
#include "clnet/training.hpp"

namespace clnet::config {

using Json = nlohmann::json;

struct Paths {
  std::string train;                       // training dataset
  std::string val;                         // optional validation dataset
  std::string checkpoint = "clnet.ckpt";   // final checkpoint; best one gets a ".best" suffix
  std::string metrics = "metrics.jsonl";
  bool operator==(const Paths&) const = default;
};

struct CliConfig {
  data::Task task = data::Task::kLine;
  Paths paths;
  net::NetConfig net;
  train::TrainConfig train;
  bool operator==(const CliConfig&) const = default;
};

// Defaults for a task: input_dim 2 and d_thr 0.05 for lines, 4 and 1e-4 for two-view.
CliConfig defaults_for(data::Task task);

Json to_json(const net::NetConfig& config);
Json to_json(const train::TrainConfig& config);
Json to_json(const CliConfig& config);

net::NetConfig net_config_from_json(const Json& j);
train::TrainConfig train_config_from_json(const Json& j, const train::TrainConfig& defaults = {});
// Keys missing from `j` keep the defaults of the selected task.
CliConfig cli_config_from_json(const Json& j);

CliConfig load_cli_config(const std::string& path);

}  // namespace clnet::config
