// SPDX-License-Identifier: Apache-2.0
#include "cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <ostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mtnet/checkpoint.hpp"
#include "mtnet/complexity.hpp"
#include "mtnet/config_json.hpp"
#include "mtnet/data.hpp"
#include "mtnet/errors.hpp"
#include "mtnet/gradcheck.hpp"
#include "mtnet/network.hpp"
#include "mtnet/pooling.hpp"
#include "mtnet/train.hpp"

namespace mtn::cli {

namespace {

using nlohmann::json;

struct Options {
  std::uint64_t seed = 0;
  bool seed_set = false;
  double tolerance = 1e-4;
  std::string config;
  std::string out_dir;
  std::string checkpoint;
  std::string views = "10x3";
  std::string split = "val";
  std::vector<double> deltas;
  std::string input;
  bool no_softpool = false;
};

int cmd_gradcheck(const Options& o, std::ostream& out) {
  GradcheckOptions g;
  g.tolerance = o.tolerance;
  if (o.seed_set) g.seed = o.seed;
  const auto results = run_gradcheck_suite(g);
  std::size_t failed = 0;
  char buf[160];
  for (const auto& r : results) {
    std::snprintf(buf, sizeof buf, "%-32s entries=%-6zu max_rel_err=%.3e %s\n", r.name.c_str(), r.checked,
                  r.max_rel_error, r.passed ? "ok" : "FAIL");
    out << buf;
    failed += !r.passed;
  }
  out << results.size() - failed << "/" << results.size() << " gradient checks within " << g.tolerance << "\n";
  return failed == 0 ? ok : numeric_failure;
}

int cmd_train(const Options& o, std::ostream& out, std::ostream& err) {
  ExperimentConfig cfg = experiment_config_from_json(load_json_file(o.config));
  if (o.seed_set) cfg.train.seed = o.seed;
  const SyntheticData data = gen_synthetic(cfg.data);
  Network net(cfg.network, cfg.train.seed);
  std::error_code ec;
  std::filesystem::create_directories(o.out_dir, ec);
  if (ec) throw IoError("cannot create output directory '" + o.out_dir + "': " + ec.message());
  const TrainResult result = train_loop(net, data.train, data.val, cfg.train, [&out](const HistoryRow& r) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "epoch %zu loss %.6f train_acc %.4f val_acc %.4f\n", r.epoch, r.loss, r.train_acc,
                  r.val_acc);
    out << buf << std::flush;
  });
  const json meta = {{"experiment", to_json(cfg)}, {"iterations", result.iterations}, {"diverged", result.diverged}};
  const std::filesystem::path dir(o.out_dir);
  write_file_atomic((dir / "history.csv").string(), history_csv(result.history));
  save_checkpoint((dir / "checkpoint.mtn1").string(), net.params(), meta);
  if (result.diverged) {
    err << "error: training diverged (" << result.failure << "); last finite state saved\n";
    return numeric_failure;
  }
  return ok;
}

std::pair<std::size_t, std::size_t> parse_views(const std::string& s) {
  std::size_t clips = 0, crops = 0;
  char tail = 0;
  if (std::sscanf(s.c_str(), "%zux%zu%c", &clips, &crops, &tail) != 2 || clips == 0 || crops == 0) {
    throw ConfigError("--views expects NxM with N, M >= 1, got '" + s + "'");
  }
  return {clips, crops};
}

int cmd_eval(const Options& o, std::ostream& out) {
  const auto [clips, crops] = parse_views(o.views);
  const Checkpoint ck = load_checkpoint(o.checkpoint);
  if (!ck.meta.contains("experiment")) throw ConfigError("checkpoint carries no experiment config");
  const ExperimentConfig cfg = experiment_config_from_json(ck.meta.at("experiment"));
  Network net(cfg.network, cfg.train.seed);
  load_into(net.params(), ck);
  const SyntheticData data = gen_synthetic(cfg.data);
  const Dataset& set = o.split == "train" ? data.train : data.val;
  std::size_t correct = 0, fallbacks = 0, views = 0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const MultiviewResult r = multiview_infer(net, set.videos[i], clips, crops);
    correct += static_cast<int>(r.predicted) == set.labels[i];
    fallbacks += r.fallback;
    views = r.views;
  }
  const json report = {{"split", o.split},
                       {"videos", set.size()},
                       {"views_per_video", views},
                       {"correct", correct},
                       {"accuracy", set.size() ? static_cast<double>(correct) / static_cast<double>(set.size()) : 0.0},
                       {"fallback_videos", fallbacks}};
  out << report.dump() << "\n";
  return ok;
}

int cmd_flops(const Options& o, std::ostream& out) {
  const json j = load_json_file(o.config);
  const NetworkConfig cfg =
      j.contains("network") ? experiment_config_from_json(j).network : network_config_from_json(j);
  if (o.deltas.empty()) {
    out << report_csv(count_flops(cfg));
  } else {
    out << sweep_csv(delta_sweep(cfg, o.deltas));
  }
  return ok;
}

int cmd_select_frames(const Options& o, std::ostream& out, std::ostream& err) {
  const Tensor input = load_tensor(o.input);
  FrameSelection sel;
  if (input.rank() == 4) {
    sel = select_frames(o.no_softpool ? input : softpool_spatial(input)).front();
  } else if (input.rank() == 2) {
    sel = triplet_select(adjacent_cosine(input), input.dim(1));
  } else {
    throw DimensionError("select-frames expects a C x T x H x W volume or a C x T matrix, got " +
                         shape_str(input.shape()));
  }
  if (sel.odd_length) err << "note: odd frame count; keeping " << sel.indices.size() << " frames\n";
  for (std::size_t t = 0; t < sel.scores.size(); ++t) {
    const bool chosen = std::binary_search(sel.indices.begin(), sel.indices.end(), t);
    out << json{{"frame", t}, {"score", sel.scores[t]}, {"selected", chosen}}.dump() << "\n";
  }
  return ok;
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-temporal convolution networks for video classification", "mtnet"};
  app.require_subcommand(1);
  Options o;
  const auto seed_option = [&o](CLI::App* sub) {
    sub->add_option_function<std::uint64_t>(
        "--seed", [&o](std::uint64_t s) { o.seed = s, o.seed_set = true; }, "Random seed override");
  };

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference gradient suite (exit 0 iff every check passes)");
  grad->add_option("--tolerance", o.tolerance, "Maximum relative error")->capture_default_str();
  seed_option(grad);

  auto* train = app.add_subcommand("train", "Train on the synthetic task; writes history.csv and checkpoint.mtn1");
  train->add_option("--config", o.config, "Experiment JSON")->required();
  train->add_option("--out", o.out_dir, "Output directory")->required();
  seed_option(train);

  auto* eval = app.add_subcommand("eval", "Multi-view accuracy of a checkpoint as JSON");
  eval->add_option("--checkpoint", o.checkpoint, "Checkpoint written by train")->required();
  eval->add_option("--views", o.views, "Temporal clips x spatial crops, e.g. 10x3")->capture_default_str();
  eval->add_option("--split", o.split, "Dataset split")->check(CLI::IsMember({"train", "val"}))->capture_default_str();

  auto* flops = app.add_subcommand("flops", "Complexity report CSV, or a delta sweep");
  flops->add_option("--config", o.config, "Network or experiment JSON")->required();
  flops->add_option("--delta-sweep", o.deltas, "Comma-separated channel ratios")->delimiter(',');

  auto* select = app.add_subcommand("select-frames", "Frame-selection scores of an MTN1 tensor as JSON lines");
  select->add_option("--input", o.input, "MTN1 tensor file (C x T x H x W or C x T)")->required();
  select->add_flag("--no-softpool", o.no_softpool, "Skip the 2x2 spatial softpool on volumes");

  app.footer("Exit codes: 0 success, 1 configuration error, 2 numeric failure, 3 I/O error.");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return ok;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return ok;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return config_error;
  }

  try {
    if (grad->parsed()) return cmd_gradcheck(o, out);
    if (train->parsed()) return cmd_train(o, out, err);
    if (eval->parsed()) return cmd_eval(o, out);
    if (flops->parsed()) return cmd_flops(o, out);
    if (select->parsed()) return cmd_select_frames(o, out, err);
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return io_error;
  } catch (const NumericError& e) {
    err << "error: " << e.what() << "\n";
    return numeric_failure;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return config_error;
  } catch (const nlohmann::json::exception& e) {
    err << "error: " << e.what() << "\n";
    return config_error;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return io_error;
  }
  err << app.help();
  return config_error;
}

}  // namespace mtn::cli
