#include "doctest.h"

#include <cstring>
#include <filesystem>

#include "clnet/config.hpp"
#include "clnet/errors.hpp"

using namespace clnet;
using namespace clnet::config;

namespace {

std::string format_error(const std::function<void()>& f)
{
  try {
    f();
  } catch (const FormatError& e) {
    return e.what();
  }
  return {};
}

net::Checkpoint small_checkpoint()
{
  net::NetConfig cfg;
  cfg.channels = 4;
  cfg.blocks = {{3, 3, 0.5}};
  cfg.resnet_depth_pre = 1;
  cfg.resnet_depth_mid = 0;
  return {cfg, net::init_params(cfg, 7), R"({"note":"x"})"};
}

}  // namespace

TEST_CASE("defaults round trip through JSON")
{
  for (auto task : {data::Task::kLine, data::Task::kTwoView}) {
    const CliConfig d = defaults_for(task);
    CHECK(cli_config_from_json(to_json(d)) == d);
    CHECK(cli_config_from_json(Json::parse(to_json(d).dump())) == d);
  }
  CHECK(defaults_for(data::Task::kTwoView).net.input_dim == 4);
  CHECK(defaults_for(data::Task::kTwoView).train.d_thr == 1e-4);
  CHECK(defaults_for(data::Task::kLine).train.d_thr == 0.05);
  CHECK(defaults_for(data::Task::kLine).train.batch_size == 32);
  CHECK(defaults_for(data::Task::kLine).train.learning_rate == 1e-3);
  CHECK(defaults_for(data::Task::kLine).train.lambda_reg == 0.5);
}

TEST_CASE("partial configs keep task defaults")
{
  const CliConfig c = cli_config_from_json(Json::parse(R"({"task":"twoview","net":{"channels":16},"train":{"epochs":2}})"));
  CHECK(c.task == data::Task::kTwoView);
  CHECK(c.net.channels == 16);
  CHECK(c.net.input_dim == 4);
  CHECK(c.train.epochs == 2);
  CHECK(c.train.d_thr == 1e-4);
}

TEST_CASE("unknown keys and bad values are named")
{
  CHECK(format_error([] { cli_config_from_json(Json::parse(R"({"tran":{}})")); }).find("tran") != std::string::npos);
  CHECK(format_error([] { cli_config_from_json(Json::parse(R"({"train":{"lr":1}})")); }).find("train.lr") !=
        std::string::npos);
  CHECK(format_error([] { cli_config_from_json(Json::parse(R"({"net":{"chanels":8}})")); }).find("net.chanels") !=
        std::string::npos);
  CHECK(format_error([] { cli_config_from_json(Json::parse(R"({"train":{"epochs":"ten"}})")); }).find("train.epochs") !=
        std::string::npos);
  CHECK(format_error([] { cli_config_from_json(Json::parse(R"({"task":"plane"})")); }).find("task") != std::string::npos);
  CHECK(!format_error([] { cli_config_from_json(Json::parse(R"({"train":{"learning_rate":-1}})")); }).empty());
  CHECK(!format_error([] {
          cli_config_from_json(Json::parse(R"({"net":{"blocks":[{"k":8,"p":3,"prune_ratio":0.5}]}})"));
        }).empty());
  CHECK_THROWS_AS(load_cli_config("/nonexistent/clnet.json"), FormatError);
}

TEST_CASE("checkpoint round trip")
{
  const auto ck = small_checkpoint();
  const std::string bytes = net::encode_checkpoint(ck);
  const auto back = net::decode_checkpoint(bytes);
  CHECK(back.config == ck.config);
  CHECK(back.metadata == ck.metadata);
  CHECK(back.params.same_values(ck.params));
  CHECK(net::encode_checkpoint(back) == bytes);

  const auto path = std::filesystem::temp_directory_path() / "clnet_test_config.ckpt";
  net::save_checkpoint(path, ck);
  CHECK(net::load_checkpoint(path).params.same_values(ck.params));
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint errors")
{
  const std::string bytes = net::encode_checkpoint(small_checkpoint());
  CHECK(format_error([&] { net::decode_checkpoint(bytes.substr(0, bytes.size() - 3)); }).find("truncated") !=
        std::string::npos);
  std::string magic = bytes;
  magic[0] = 'X';
  CHECK(format_error([&] { net::decode_checkpoint(magic); }).find("magic") != std::string::npos);
  std::string version = bytes;
  version[8] = 9;
  CHECK(format_error([&] { net::decode_checkpoint(version); }).find("version") != std::string::npos);
  CHECK(format_error([&] { net::decode_checkpoint(bytes + "z"); }).find("trailing") != std::string::npos);

  // A parameter set that does not match its own config.
  auto ck = small_checkpoint();
  ck.config.channels = 5;
  CHECK_THROWS_AS(net::decode_checkpoint(net::encode_checkpoint(ck)), FormatError);

  // Non-finite weights are rejected.
  auto nan_ck = small_checkpoint();
  nan_ck.params.entries()[0].second.mutable_data()[0] = std::nan("");
  CHECK_THROWS_AS(net::decode_checkpoint(net::encode_checkpoint(nan_ck)), FormatError);
  CHECK_THROWS_AS(net::load_checkpoint("/nonexistent/x.ckpt"), FormatError);
}
