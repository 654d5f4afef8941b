// clnet: dataset generation, training, evaluation and inference.
//
// Exit codes: 0 success, 1 usage error, 2 data or configuration error,
// 3 numerical failure.

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "clnet/config.hpp"
#include "clnet/errors.hpp"
#include "clnet/estimators.hpp"
#include "clnet/network.hpp"
#include "clnet/parallel.hpp"
#include "clnet/pipeline.hpp"
#include "clnet/synthetic.hpp"
#include "clnet/training.hpp"

namespace {

using namespace clnet;
using config::Json;

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::size_t default_threads()
{
  if (const char* env = std::getenv("CLNET_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v >= 1) return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
    }
    std::cerr << "warning: ignoring invalid CLNET_THREADS='" << env << "'\n";
  }
  return 1;
}

Json model_json(const geometry::ParametricModel& model)
{
  if (const auto* l = std::get_if<geometry::LineModel>(&model)) return {{"line", {l->a, l->b, l->c}}};
  const auto& m = std::get<geometry::EssentialMatrix>(model).m;
  Json e = Json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) e.push_back(m(r, c));
  return {{"essential", e}};
}

data::Task dataset_task(const std::vector<data::Sample>& samples, const std::string& path)
{
  if (samples.empty()) throw FormatError(path + ": dataset is empty");
  const data::Task task = samples.front().task;
  for (const auto& s : samples)
    if (s.task != task) throw FormatError(path + ": dataset mixes tasks");
  return task;
}

double default_d_thr(data::Task task) { return config::defaults_for(task).train.d_thr; }

// Threshold stored with the checkpoint's run configuration, if any.
std::optional<double> checkpoint_d_thr(const net::Checkpoint& ckpt)
{
  if (ckpt.metadata.empty()) return std::nullopt;
  try {
    const Json meta = Json::parse(ckpt.metadata);
    if (meta.contains("train") && meta["train"].contains("d_thr")) return meta["train"]["d_thr"].get<double>();
  } catch (const Json::exception&) {
  }
  return std::nullopt;
}

void check_compatible(const net::NetConfig& net, const std::vector<data::Sample>& samples)
{
  for (const auto& s : samples) {
    if (s.set.dim() != net.input_dim)
      throw FormatError("checkpoint expects " + std::to_string(net.input_dim) + "-D items, sample " +
                        std::to_string(s.index) + " has " + std::to_string(s.set.dim()));
    if (s.set.size() < net.min_items())
      throw FormatError("sample " + std::to_string(s.index) + " has " + std::to_string(s.set.size()) +
                        " items, the network needs at least " + std::to_string(net.min_items()));
  }
}

void apply_ablations(const std::vector<std::string>& ablate, config::CliConfig& cfg)
{
  for (const auto& a : ablate) {
    if (a == "no-temperature")
      cfg.train.use_temperature = false;
    else if (a == "mlp-pool")
      cfg.net.use_annular = false;
    else if (a == "no-global")
      cfg.net.use_global = false;
    else
      throw UsageError("unknown ablation '" + a + "' (expected no-temperature, mlp-pool or no-global)");
  }
}

// ---- gen ------------------------------------------------------------------------

struct GenArgs {
  std::string task;
  std::size_t count = 0;
  double outlier_ratio = 0.5;
  std::uint64_t seed = 0;
  std::size_t points = 1000;
  double noise = 0.0;
  std::string out;
};

int cmd_gen(const GenArgs& a)
{
  const data::Task task = data::parse_task(a.task);
  if (!(a.outlier_ratio >= 0.0 && a.outlier_ratio < 1.0)) throw UsageError("--outlier-ratio must be in [0, 1)");
  std::vector<data::Sample> samples;
  if (task == data::Task::kLine) {
    if (a.noise != 0.0) throw UsageError("--noise applies to the twoview task only");
    samples = data::gen_line_dataset(a.count, a.outlier_ratio, a.seed, a.points);
  } else {
    data::TwoViewOptions opt;
    opt.n_points = a.points;
    opt.outlier_ratio = a.outlier_ratio;
    opt.noise = a.noise;
    samples = data::gen_two_view_dataset(a.count, opt, a.seed);
  }
  data::write_dataset(a.out, samples);
  std::cout << "wrote " << samples.size() << " " << data::task_name(task) << " samples to " << a.out << "\n";
  return kOk;
}

// ---- train ------------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::vector<std::string> ablate;
  std::size_t threads = 1;
  bool threads_set = false;
};

int cmd_train(const TrainArgs& a)
{
  config::CliConfig cfg = config::load_cli_config(a.config);
  apply_ablations(a.ablate, cfg);
  if (a.threads_set) cfg.train.threads = a.threads;
  if (cfg.paths.train.empty()) throw FormatError("config: 'paths.train' is required");

  const auto train_set = data::read_dataset(cfg.paths.train);
  if (dataset_task(train_set, cfg.paths.train) != cfg.task)
    throw FormatError(cfg.paths.train + ": dataset task does not match config task " + data::task_name(cfg.task));
  check_compatible(cfg.net, train_set);
  std::vector<data::Sample> val_set;
  if (!cfg.paths.val.empty()) {
    val_set = data::read_dataset(cfg.paths.val);
    if (!val_set.empty() && dataset_task(val_set, cfg.paths.val) != cfg.task)
      throw FormatError(cfg.paths.val + ": dataset task does not match config task");
    check_compatible(cfg.net, val_set);
  }

  std::ofstream metrics(cfg.paths.metrics, std::ios::trunc);
  if (!metrics) throw FormatError("cannot write metrics file " + cfg.paths.metrics);
  const std::string metadata = config::to_json(cfg).dump();

  const auto result = train::train(train_set, val_set, cfg.net, cfg.train, [&](const train::EpochMetrics& m) {
    const Json line = {{"epoch", m.epoch},
                       {"train_loss", m.train_loss},
                       {"val_metric", std::isfinite(m.val_metric) ? Json(m.val_metric) : Json(nullptr)},
                       {"inlier_ratio_post_prune",
                        std::isfinite(m.inlier_ratio_post_prune) ? Json(m.inlier_ratio_post_prune) : Json(nullptr)},
                       {"wall_time_ms", m.wall_time_ms},
                       {"reg_skipped", m.reg_skipped}};
    metrics << line.dump() << "\n" << std::flush;
    std::cout << "epoch " << m.epoch << "  loss " << std::setprecision(6) << m.train_loss << "  val "
              << m.val_metric << "  inlier_ratio " << m.inlier_ratio_post_prune << "  time_ms "
              << std::setprecision(1) << std::fixed << m.wall_time_ms << std::defaultfloat << "\n"
              << std::flush;
  });

  net::save_checkpoint(cfg.paths.checkpoint, {cfg.net, result.params, metadata});
  net::save_checkpoint(cfg.paths.checkpoint + ".best", {cfg.net, result.best_params, metadata});
  std::cout << "saved " << cfg.paths.checkpoint << " and " << cfg.paths.checkpoint << ".best\n";
  return kOk;
}

// ---- eval / infer -----------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string out;
  bool oracle = false;
  std::optional<double> d_thr;
  std::size_t threads = 1;
};

Json aggregate_json(const pipeline::Aggregate& a)
{
  Json j = {{"outlier_ratio", a.outlier_ratio < 0.0 ? Json("all") : Json(a.outlier_ratio)},
            {"count", a.count},
            {"precision", a.precision},
            {"recall", a.recall},
            {"f1", a.f1},
            {"inlier_ratio_per_block", a.inlier_ratio_per_block}};
  if (a.auc.empty())
    j["mean_line_l2"] = a.mean_line_l2;
  else
    j["auc"] = {{"5", a.auc[0]}, {"10", a.auc[1]}, {"20", a.auc[2]}};
  return j;
}

void print_table(data::Task task, const std::vector<pipeline::Aggregate>& rows)
{
  std::cout << std::left << std::setw(8) << "ratio" << std::setw(7) << "count";
  if (task == data::Task::kLine)
    std::cout << std::setw(13) << "mean_L2";
  else
    std::cout << std::setw(9) << "AUC@5" << std::setw(9) << "AUC@10" << std::setw(9) << "AUC@20";
  std::cout << std::setw(10) << "precision" << std::setw(9) << "recall" << std::setw(9) << "F1"
            << "inlier_ratio_per_block\n";
  for (const auto& r : rows) {
    std::ostringstream ratio;
    if (r.outlier_ratio < 0.0)
      ratio << "all";
    else
      ratio << std::fixed << std::setprecision(2) << r.outlier_ratio;
    std::cout << std::left << std::setw(8) << ratio.str() << std::setw(7) << r.count;
    std::cout << std::fixed;
    if (task == data::Task::kLine)
      std::cout << std::setw(13) << std::setprecision(6) << r.mean_line_l2;
    else
      for (double v : r.auc) std::cout << std::setw(9) << std::setprecision(2) << v;
    std::cout << std::setprecision(4) << std::setw(10) << r.precision << std::setw(9) << r.recall << std::setw(9)
              << r.f1;
    for (std::size_t b = 0; b < r.inlier_ratio_per_block.size(); ++b)
      std::cout << (b ? " " : "") << r.inlier_ratio_per_block[b];
    std::cout << std::defaultfloat << "\n";
  }
}

struct Loaded {
  std::vector<data::Sample> samples;
  data::Task task;
  std::optional<net::Checkpoint> ckpt;
  double d_thr;
};

Loaded load_for_inference(const EvalArgs& a, bool allow_oracle)
{
  Loaded l;
  l.samples = data::read_dataset(a.data);
  l.task = dataset_task(l.samples, a.data);
  if (!(allow_oracle && a.oracle)) {
    if (a.checkpoint.empty()) throw UsageError("--checkpoint is required");
    l.ckpt = net::load_checkpoint(a.checkpoint);
    check_compatible(l.ckpt->config, l.samples);
  }
  l.d_thr = a.d_thr ? *a.d_thr : (l.ckpt ? checkpoint_d_thr(*l.ckpt).value_or(default_d_thr(l.task))
                                          : default_d_thr(l.task));
  if (!(l.d_thr > 0.0)) throw UsageError("--d-thr must be > 0");
  return l;
}

int cmd_eval(const EvalArgs& a)
{
  const Loaded l = load_for_inference(a, true);
  std::vector<pipeline::SampleMetrics> metrics(l.samples.size());
  if (a.oracle) {
    for (std::size_t i = 0; i < l.samples.size(); ++i) {
      const auto& s = l.samples[i];
      if (!s.set.gt_model) throw FormatError("sample " + std::to_string(s.index) + " has no ground-truth model");
      metrics[i] = pipeline::score_prediction(s, pipeline::predict_with_model(s, *s.set.gt_model, l.d_thr));
    }
  } else {
    metrics = pipeline::evaluate(l.samples, l.ckpt->params, l.ckpt->config, l.d_thr, a.threads);
  }
  const auto rows = pipeline::aggregate(l.task, metrics);

  Json report = {{"task", data::task_name(l.task)}, {"d_thr", l.d_thr}, {"oracle", a.oracle}};
  Json per_sample = Json::array();
  for (const auto& m : metrics) {
    Json j = {{"index", m.index},
              {"outlier_ratio", m.outlier_ratio},
              {"precision", m.precision},
              {"recall", m.recall},
              {"f1", m.f1},
              {"inlier_ratio_per_block", m.inlier_ratio_per_block},
              {"uniform_fallback", m.uniform_fallback}};
    if (l.task == data::Task::kLine)
      j["line_l2"] = m.line_l2;
    else
      j["pose_error_deg"] = m.pose_error_deg;
    per_sample.push_back(j);
  }
  report["samples"] = per_sample;
  Json agg = Json::array();
  for (const auto& r : rows) agg.push_back(aggregate_json(r));
  report["aggregate"] = agg;

  if (!a.out.empty()) {
    std::ofstream out(a.out, std::ios::trunc);
    if (!out) throw FormatError("cannot write report " + a.out);
    out << report.dump(2) << "\n";
  }
  print_table(l.task, rows);
  return kOk;
}

int cmd_infer(const EvalArgs& a)
{
  const Loaded l = load_for_inference(a, false);
  std::vector<pipeline::Prediction> preds(l.samples.size());
  parallel_for(l.samples.size(), a.threads, [&](std::size_t, std::size_t i) {
    preds[i] = pipeline::predict(l.samples[i], l.ckpt->params, l.ckpt->config, l.d_thr);
  });
  std::ofstream out(a.out, std::ios::trunc);
  if (!out) throw FormatError("cannot write predictions " + a.out);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto& p = preds[i];
    std::vector<int> mask(p.verification.mask.begin(), p.verification.mask.end());
    const Json j = {{"index", l.samples[i].index},
                    {"kept", p.kept},
                    {"candidates", p.candidates},
                    {"weights", p.final_scores},
                    {"model", model_json(p.model)},
                    {"uniform_fallback", p.uniform_fallback},
                    {"inliers", p.verification.inliers},
                    {"mask", mask}};
    out << j.dump() << "\n";
  }
  std::cout << "wrote " << preds.size() << " predictions to " << a.out << "\n";
  return kOk;
}

// ---- config ---------------------------------------------------------------------

int cmd_config(const std::string& task, bool print_defaults, const std::string& check)
{
  if (!check.empty()) {
    const auto cfg = config::load_cli_config(check);
    std::cout << config::to_json(cfg).dump(2) << "\n";
    return kOk;
  }
  if (!print_defaults) throw UsageError("config: pass --print-defaults or --check FILE");
  std::cout << config::to_json(config::defaults_for(data::parse_task(task))).dump(2) << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv)
{
  CLI::App app{"CLNet: progressive correspondence pruning by local-to-global consensus"};
  app.require_subcommand(1);
  const std::size_t env_threads = default_threads();

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Generate a synthetic dataset");
  g->add_option("task", gen.task, "line or twoview")->required()->check(CLI::IsMember({"line", "twoview"}));
  g->add_option("--count", gen.count, "Number of samples")->required();
  g->add_option("--outlier-ratio", gen.outlier_ratio, "Fraction of outliers, in [0, 1)");
  g->add_option("--seed", gen.seed, "Generator seed");
  g->add_option("--points", gen.points, "Items per sample")->capture_default_str();
  g->add_option("--noise", gen.noise, "Inlier noise (twoview, normalized units)");
  g->add_option("--out", gen.out, "Output dataset path")->required();

  TrainArgs tr;
  tr.threads = env_threads;
  auto* t = app.add_subcommand("train", "Train a network from a JSON config");
  t->add_option("config", tr.config, "Config file")->required();
  t->add_option("--ablate", tr.ablate, "no-temperature | mlp-pool | no-global (repeatable)");
  auto* t_threads = t->add_option("--threads", tr.threads, "Worker threads (default 1 or CLNET_THREADS)");

  EvalArgs ev;
  ev.threads = env_threads;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  e->add_option("--checkpoint", ev.checkpoint, "Checkpoint file");
  e->add_option("--data", ev.data, "Dataset file")->required();
  e->add_option("--out", ev.out, "JSON report path");
  e->add_flag("--oracle", ev.oracle, "Verify with the ground-truth model instead of the network");
  e->add_option("--d-thr", ev.d_thr, "Verification threshold (default: from checkpoint or task)");
  e->add_option("--threads", ev.threads, "Worker threads");

  EvalArgs inf;
  inf.threads = env_threads;
  auto* i = app.add_subcommand("infer", "Write per-sample predictions");
  i->add_option("--checkpoint", inf.checkpoint, "Checkpoint file")->required();
  i->add_option("--data", inf.data, "Dataset file")->required();
  i->add_option("--out", inf.out, "Predictions path (JSON lines)")->required();
  i->add_option("--d-thr", inf.d_thr, "Verification threshold (default: from checkpoint or task)");
  i->add_option("--threads", inf.threads, "Worker threads");

  std::string cfg_task = "line";
  std::string cfg_check;
  bool print_defaults = false;
  auto* c = app.add_subcommand("config", "Print or check configuration");
  c->add_flag("--print-defaults", print_defaults, "Print the default configuration");
  c->add_option("--task", cfg_task, "Task whose defaults to print")->check(CLI::IsMember({"line", "twoview"}));
  c->add_option("--check", cfg_check, "Parse a config file and print it with defaults filled in");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return kUsage;
  }

  try {
    if (*g) return cmd_gen(gen);
    if (*t) {
      tr.threads_set = t_threads->count() > 0 || std::getenv("CLNET_THREADS") != nullptr;
      return cmd_train(tr);
    }
    if (*e) return cmd_eval(ev);
    if (*i) return cmd_infer(inf);
    if (*c) return cmd_config(cfg_task, print_defaults, cfg_check);
  } catch (const UsageError& err) {
    std::cerr << "usage error: " << err.what() << "\n";
    return kUsage;
  } catch (const NumericalError& err) {
    std::cerr << "numerical error: " << err.what() << "\n";
    return kNumerical;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kData;
  }
  return kUsage;
}
