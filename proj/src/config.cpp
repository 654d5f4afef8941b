#include "clnet/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "clnet/errors.hpp"

namespace clnet::config {

namespace {

void require_object(const Json& j, const std::string& where)
{
  if (!j.is_object()) throw FormatError("config: " + (where.empty() ? std::string("top level") : where) +
                                        " must be an object");
}

void reject_unknown(const Json& j, const std::set<std::string>& known, const std::string& where)
{
  for (const auto& [key, value] : j.items())
    if (!known.count(key)) throw FormatError("config: unknown key '" + where + key + "'");
}

template <class T>
void read(const Json& j, const char* key, T& out, const std::string& where)
{
  if (!j.contains(key)) return;
  const Json& v = j.at(key);
  const std::string name = where + key;
  if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) throw FormatError("config: '" + name + "' must be a boolean");
  } else if constexpr (std::is_integral_v<T>) {
    if (!v.is_number_unsigned()) throw FormatError("config: '" + name + "' must be a non-negative integer");
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!v.is_number()) throw FormatError("config: '" + name + "' must be a number");
  } else {
    if (!v.is_string()) throw FormatError("config: '" + name + "' must be a string");
  }
  out = v.get<T>();
}

}  // namespace

CliConfig defaults_for(data::Task task)
{
  CliConfig c;
  c.task = task;
  if (task == data::Task::kTwoView) {
    c.net.input_dim = 4;
    c.train.d_thr = 1e-4;
  }
  return c;
}

Json to_json(const net::NetConfig& config)
{
  Json blocks = Json::array();
  for (const auto& b : config.blocks) blocks.push_back({{"k", b.k}, {"p", b.p}, {"prune_ratio", b.prune_ratio}});
  return {{"input_dim", config.input_dim},
          {"channels", config.channels},
          {"blocks", blocks},
          {"resnet_depth_pre", config.resnet_depth_pre},
          {"resnet_depth_mid", config.resnet_depth_mid},
          {"final_head_depth", config.final_head_depth},
          {"use_annular", config.use_annular},
          {"use_global", config.use_global}};
}

Json to_json(const train::TrainConfig& config)
{
  return {{"learning_rate", config.learning_rate},
          {"batch_size", config.batch_size},
          {"epochs", config.epochs},
          {"lambda_reg", config.lambda_reg},
          {"d_thr", config.d_thr},
          {"temperature_alpha", config.temperature_alpha},
          {"use_temperature", config.use_temperature},
          {"seed", config.seed},
          {"threads", config.threads}};
}

Json to_json(const CliConfig& config)
{
  return {{"task", data::task_name(config.task)},
          {"paths",
           {{"train", config.paths.train},
            {"val", config.paths.val},
            {"checkpoint", config.paths.checkpoint},
            {"metrics", config.paths.metrics}}},
          {"net", to_json(config.net)},
          {"train", to_json(config.train)}};
}

net::NetConfig net_config_from_json(const Json& j)
{
  const std::string where = "net.";
  require_object(j, "net");
  reject_unknown(j,
                 {"input_dim", "channels", "blocks", "resnet_depth_pre", "resnet_depth_mid", "final_head_depth",
                  "use_annular", "use_global"},
                 where);
  net::NetConfig c;
  read(j, "input_dim", c.input_dim, where);
  read(j, "channels", c.channels, where);
  read(j, "resnet_depth_pre", c.resnet_depth_pre, where);
  read(j, "resnet_depth_mid", c.resnet_depth_mid, where);
  read(j, "final_head_depth", c.final_head_depth, where);
  read(j, "use_annular", c.use_annular, where);
  read(j, "use_global", c.use_global, where);
  if (j.contains("blocks")) {
    const Json& blocks = j.at("blocks");
    if (!blocks.is_array()) throw FormatError("config: 'net.blocks' must be an array");
    c.blocks.clear();
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const std::string bw = where + "blocks[" + std::to_string(i) + "].";
      require_object(blocks[i], bw);
      reject_unknown(blocks[i], {"k", "p", "prune_ratio"}, bw);
      net::PruningBlockConfig b;
      read(blocks[i], "k", b.k, bw);
      read(blocks[i], "p", b.p, bw);
      read(blocks[i], "prune_ratio", b.prune_ratio, bw);
      c.blocks.push_back(b);
    }
  }
  try {
    c.validate();
  } catch (const std::exception& e) {
    throw FormatError(std::string("config: net: ") + e.what());
  }
  return c;
}

train::TrainConfig train_config_from_json(const Json& j, const train::TrainConfig& defaults)
{
  const std::string where = "train.";
  require_object(j, "train");
  reject_unknown(j,
                 {"learning_rate", "batch_size", "epochs", "lambda_reg", "d_thr", "temperature_alpha",
                  "use_temperature", "seed", "threads"},
                 where);
  train::TrainConfig c = defaults;
  read(j, "learning_rate", c.learning_rate, where);
  read(j, "batch_size", c.batch_size, where);
  read(j, "epochs", c.epochs, where);
  read(j, "lambda_reg", c.lambda_reg, where);
  read(j, "d_thr", c.d_thr, where);
  read(j, "temperature_alpha", c.temperature_alpha, where);
  read(j, "use_temperature", c.use_temperature, where);
  read(j, "seed", c.seed, where);
  read(j, "threads", c.threads, where);
  try {
    c.validate();
  } catch (const std::exception& e) {
    throw FormatError(std::string("config: train: ") + e.what());
  }
  return c;
}

CliConfig cli_config_from_json(const Json& j)
{
  require_object(j, "");
  reject_unknown(j, {"task", "paths", "net", "train"}, "");
  std::string task = "line";
  read(j, "task", task, "");
  CliConfig c;
  try {
    c = defaults_for(data::parse_task(task));
  } catch (const std::exception&) {
    throw FormatError("config: 'task' must be \"line\" or \"twoview\"");
  }
  if (j.contains("paths")) {
    const Json& p = j.at("paths");
    require_object(p, "paths");
    reject_unknown(p, {"train", "val", "checkpoint", "metrics"}, "paths.");
    read(p, "train", c.paths.train, "paths.");
    read(p, "val", c.paths.val, "paths.");
    read(p, "checkpoint", c.paths.checkpoint, "paths.");
    read(p, "metrics", c.paths.metrics, "paths.");
  }
  if (j.contains("net")) {
    Json merged = to_json(c.net);
    require_object(j.at("net"), "net");
    for (const auto& [key, value] : j.at("net").items()) merged[key] = value;
    c.net = net_config_from_json(merged);
  }
  if (j.contains("train")) c.train = train_config_from_json(j.at("train"), c.train);
  return c;
}

CliConfig load_cli_config(const std::string& path)
{
  std::ifstream in(path);
  if (!in) throw FormatError("config: cannot open " + path);
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw FormatError("config: " + path + ": " + e.what());
  }
  return cli_config_from_json(j);
}

}  // namespace clnet::config
