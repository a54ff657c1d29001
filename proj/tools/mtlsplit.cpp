// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The mtlsplit Authors
//
// mtlsplit command-line front end.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "mtlsplit/analyzer.hpp"
#include "mtlsplit/binary_io.hpp"
#include "mtlsplit/error.hpp"
#include "mtlsplit/model.hpp"
#include "mtlsplit/rng.hpp"
#include "mtlsplit/run_config.hpp"
#include "mtlsplit/synth_data.hpp"
#include "mtlsplit/trainer.hpp"
#include "mtlsplit/transport.hpp"

namespace fs = std::filesystem;
using namespace mtlsplit;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

// Flags shared by every subcommand; each overrides its config-file field.
struct Flags {
  std::string config;
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;
  std::string mode;
  std::string listen;
  std::string connect;
  std::string unit = "si";
  std::string out;
  std::string data;
  std::string checkpoint;
  std::string format = "text";
  std::size_t limit = 0;
  std::vector<std::string> descriptors;
  std::string stl;
  std::string mtl;
  double sc_target_seconds = 0.0;
};

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("mtlsplit");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  const char* env = std::getenv("MTLSPLIT_LOG");
  spdlog::set_level(env ? spdlog::level::from_str(env) : spdlog::level::info);
}

RunConfig resolve_config(const Flags& f) {
  RunConfig cfg = f.config.empty() ? RunConfig{} : load_run_config(f.config);
  if (f.seed_opt && f.seed_opt->count() > 0) cfg.seed = f.seed;
  if (!f.data.empty()) cfg.dataset_path = f.data;
  if (!f.listen.empty()) cfg.listen = f.listen;
  if (!f.connect.empty()) cfg.connect = f.connect;
  cfg.validate();
  return cfg;
}

// Loads the configured dataset file, or renders one from the spec and seed.
// A loaded file's own spec replaces the configured one.
Dataset obtain_dataset(RunConfig& cfg) {
  if (cfg.dataset_path.empty()) return generate(cfg.dataset, cfg.seed);
  Dataset ds = load_dataset(cfg.dataset_path);
  cfg.dataset = ds.spec;
  cfg.validate();
  return ds;
}

Paradigm endpoint_mode(const Flags& f, const RunConfig& cfg) {
  const Paradigm p = f.mode.empty() ? cfg.paradigm : paradigm_from_string(f.mode);
  if (p == Paradigm::kLoC) throw ConfigError("endpoints run in sc or roc mode");
  return p;
}

void write_json(const std::string& path, const nlohmann::json& doc) {
  const std::string text = doc.dump(2) + "\n";
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

nlohmann::json read_json(const std::string& path) {
  const auto bytes = read_file(path);
  try {
    return nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(fmt::format("'{}': {}", path, e.what()));
  }
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<std::uint32_t> class_counts_of(const ModelConfig& mc) {
  std::vector<std::uint32_t> n;
  for (const auto& t : mc.tasks) n.push_back(t.n_classes);
  return n;
}

int cmd_gen_data(const Flags& f) {
  RunConfig cfg = resolve_config(f);
  const std::string out = f.out.empty() ? "dataset.mtld" : f.out;
  const Dataset ds = generate(cfg.dataset, cfg.seed);
  const auto bytes = encode_dataset(ds);
  write_file(out, bytes);
  fmt::print("wrote {} ({} bytes, digest {:016x})\n", out, bytes.size(), fnv1a64(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size())));
  fmt::print("K = {}\n", ds.size());
  const auto counts = ds.class_counts();
  const auto names = ds.task_names();
  for (std::size_t j = 0; j < names.size(); ++j) {
    fmt::print("  {:<16} {}\n", names[j], fmt::join(counts[j], " "));
  }
  return kExitOk;
}

int cmd_train(const Flags& f) {
  RunConfig cfg = resolve_config(f);
  const std::string mode = f.mode.empty() ? "mtl" : f.mode;
  if (mode != "mtl" && mode != "stl") throw ConfigError(fmt::format("unknown train mode '{}' (expected stl or mtl)", mode));
  const Dataset ds = obtain_dataset(cfg);
  const fs::path out = f.out.empty() ? "run" : f.out;
  fs::create_directories(out);

  const auto t0 = std::chrono::steady_clock::now();
  const auto [train_set, test_set] = split_train_test(ds, cfg.train_ratio, cfg.seed);
  const ModelConfig mc = cfg.model_config();
  std::vector<std::string> names;
  for (const auto& t : mc.tasks) names.push_back(t.name);
  const TaskData train_data = task_data(train_set, names);
  const TaskData test_data = task_data(test_set, names);

  RunMetrics metrics;
  metrics.seed = cfg.seed;
  metrics.config_digest = config_digest(cfg);
  metrics.mode = mode;
  metrics.tasks = names;

  if (mode == "mtl") {
    MtlModel model = MtlModel::initialize(mc, cfg.seed);
    Optimizer opt(cfg.optimizer);
    const TrainHistory h = train(model, train_data, opt, cfg.train_options());
    metrics.epoch_losses = h.epoch_losses;
    for (double a : evaluate(model, test_data)) metrics.accuracies.push_back(round2(a));
    save_checkpoint((out / "mtl.ckpt").string(), model);
    save_checkpoint((out / "mtl.backbone.ckpt").string(), model, ModelSlice::kBackbone);
    save_checkpoint((out / "mtl.heads.ckpt").string(), model, ModelSlice::kHeads);
  } else {
    metrics.epoch_losses.assign(cfg.epochs, std::vector<double>(names.size(), 0.0));
    for (std::size_t j = 0; j < names.size(); ++j) {
      TrainHistory h;
      const MtlModel model = train_stl(mc, j, train_data, cfg.train_options(), cfg.optimizer, &h);
      for (std::size_t e = 0; e < h.epoch_losses.size(); ++e) metrics.epoch_losses[e][j] = h.epoch_losses[e][0];
      TaskData single{test_data.inputs, {}};
      for (const auto& l : test_data.labels) single.labels.push_back({l[j]});
      metrics.accuracies.push_back(round2(evaluate(model, single)[0]));
      save_checkpoint((out / fmt::format("stl_{}.ckpt", names[j])).string(), model);
      spdlog::info("stl {}: {:.2f}%", names[j], metrics.accuracies.back());
    }
  }
  metrics.wall_clock_seconds = seconds_since(t0);
  write_json((out / fmt::format("{}_metrics.json", mode)).string(), to_json(metrics));
  write_json((out / "config.json").string(), to_json(cfg));

  fmt::print("{} run, seed {}, config {}\n", mode, cfg.seed, metrics.config_digest);
  for (std::size_t j = 0; j < names.size(); ++j) fmt::print("  {:<16} {:6.2f}%\n", names[j], metrics.accuracies[j]);
  fmt::print("artifacts in {}\n", out.string());
  return kExitOk;
}

int cmd_finetune(const Flags& f) {
  RunConfig cfg = resolve_config(f);
  if (f.checkpoint.empty()) throw ConfigError("finetune needs --checkpoint");
  cfg.finetune.validate();
  const Dataset ds = obtain_dataset(cfg);
  MtlModel model = model_from_checkpoint(load_checkpoint(f.checkpoint));

  if (!cfg.finetune_add_task.empty()) {
    const auto& factors = ds.spec.factors;
    const auto it = std::find_if(factors.begin(), factors.end(),
                                 [&](const Factor& x) { return x.name == cfg.finetune_add_task; });
    if (it == factors.end()) throw ConfigError(fmt::format("dataset has no factor '{}'", cfg.finetune_add_task));
    model.add_head({it->name, it->n_values}, cfg.seed);
  }

  const auto t0 = std::chrono::steady_clock::now();
  const auto [train_set, test_set] = split_train_test(ds, cfg.train_ratio, cfg.seed);
  const TaskData train_data = task_data(train_set, model);
  const TaskData test_data = task_data(test_set, model);

  const auto before = evaluate(model, test_data);
  TrainOptions opts = cfg.train_options();
  opts.epochs = cfg.finetune_epochs;
  const TrainHistory h = finetune(model, train_data, cfg.finetune, opts);
  const auto after = evaluate(model, test_data);

  const std::string out = f.out.empty() ? "finetuned.ckpt" : f.out;
  save_checkpoint(out, model);

  RunMetrics metrics;
  metrics.seed = cfg.seed;
  metrics.config_digest = config_digest(cfg);
  metrics.mode = "finetune";
  for (const auto& t : model.config().tasks) metrics.tasks.push_back(t.name);
  metrics.epoch_losses = h.epoch_losses;
  for (double a : after) metrics.accuracies.push_back(round2(a));
  metrics.wall_clock_seconds = seconds_since(t0);
  write_json(out + ".metrics.json", to_json(metrics));

  fmt::print("fine-tuned {} heads (alpha {}, eta {}, {} epochs)\n", model.n_tasks(), cfg.finetune.alpha,
             cfg.finetune.eta, cfg.finetune_epochs);
  for (std::size_t j = 0; j < model.n_tasks(); ++j) {
    fmt::print("  {:<16} {:6.2f}% -> {:6.2f}%\n", metrics.tasks[j], round2(before[j]), metrics.accuracies[j]);
  }
  fmt::print("wrote {}\n", out);
  return kExitOk;
}

std::atomic<SocketServer*> g_server{nullptr};

extern "C" void on_signal(int) {
  if (SocketServer* s = g_server.load()) s->shutdown();
}

int cmd_serve(const Flags& f) {
  RunConfig cfg = resolve_config(f);
  if (f.checkpoint.empty()) throw ConfigError("serve needs --checkpoint");
  const Paradigm mode = endpoint_mode(f, cfg);
  const Checkpoint ckpt = load_checkpoint(f.checkpoint);
  // Only the slice the server role needs is kept in memory.
  std::optional<HeadServer> heads;
  if (mode == Paradigm::kSC) {
    heads.emplace(ckpt.config, heads_from_checkpoint(ckpt));
  } else {
    heads.emplace(ckpt.config, backbone_from_checkpoint(ckpt), heads_from_checkpoint(ckpt));
  }
  SocketServer server(*heads, parse_address(cfg.listen), cfg.timeout);
  g_server.store(&server);
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  fmt::print("serving {} heads ({} mode) on {}:{}\n", heads->config().tasks.size(), to_string(mode),
             parse_address(cfg.listen).host, server.port());
  std::fflush(stdout);
  server.run();
  g_server.store(nullptr);
  fmt::print("served {} requests\n", server.requests_served());
  return kExitOk;
}

int cmd_edge(const Flags& f) {
  RunConfig cfg = resolve_config(f);
  const Paradigm mode = endpoint_mode(f, cfg);
  const Dataset ds = obtain_dataset(cfg);
  const SocketAddress addr = parse_address(cfg.connect);

  std::optional<Backbone> backbone;
  if (mode == Paradigm::kSC) {
    if (f.checkpoint.empty()) throw ConfigError("edge in sc mode needs --checkpoint");
    backbone = backbone_from_checkpoint(load_checkpoint(f.checkpoint));
  }
  SocketTransport transport(addr, cfg.timeout);
  std::optional<EdgeClient> client;
  if (backbone) {
    client.emplace(std::move(*backbone), transport);
  } else {
    client.emplace(Shape{ds.spec.width, ds.spec.height, FactorSpec::kChannels}, transport);
  }

  const std::size_t n = f.limit == 0 ? ds.size() : std::min(f.limit, ds.size());
  nlohmann::json rows = nlohmann::json::array();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<Tensor> logits = client->infer(ds.samples[i].pixels);
    const double dt = seconds_since(t0);
    total += dt;
    nlohmann::json row{{"index", i}, {"request_id", client->last_request_id()}, {"seconds", dt}};
    for (const auto& l : logits) {
      const auto d = l.data();
      row["logits"].push_back(std::vector<float>(d.begin(), d.end()));
      row["predicted"].push_back(std::max_element(d.begin(), d.end()) - d.begin());
    }
    row["labels"] = ds.samples[i].labels;
    rows.push_back(std::move(row));
  }
  const std::string out = f.out.empty() ? "predictions.json" : f.out;
  write_json(out, {{"mode", to_string(mode)}, {"server", addr.to_string()}, {"n_inputs", n}, {"predictions", rows}});
  fmt::print("{} inputs via {} ({} mode), mean {:.3f} ms/request; wrote {}\n", n, addr.to_string(), to_string(mode),
             n ? 1e3 * total / static_cast<double>(n) : 0.0, out);
  return kExitOk;
}

int cmd_simulate(const Flags& f) {
  RunConfig cfg = resolve_config(f);
  const Paradigm mode = endpoint_mode(f, cfg);
  const Dataset ds = obtain_dataset(cfg);
  const MtlModel model = f.checkpoint.empty() ? MtlModel::initialize(cfg.model_config(), cfg.seed)
                                              : model_from_checkpoint(load_checkpoint(f.checkpoint));
  const HeadServer server = mode == Paradigm::kSC ? HeadServer(model.config(), model.heads())
                                                  : HeadServer(model.config(), model.backbone(), model.heads());
  SimulatedTransport transport(server, cfg.channel, derive_seed(cfg.seed, "channel"));
  EdgeClient client = mode == Paradigm::kSC ? EdgeClient(model.backbone(), transport)
                                            : EdgeClient(model.config().input_shape(), transport);

  const std::size_t n = std::min(f.limit == 0 ? std::size_t{100} : f.limit, ds.size());
  std::size_t mismatches = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto remote = client.infer(ds.samples[i].pixels);
    const auto local = predict_all(model, ds.samples[i].pixels);
    for (std::size_t j = 0; j < local.size(); ++j) mismatches += local[j].bitwise_equal(remote[j]) ? 0 : 1;
  }
  const TransferReport analytic = transfer_time_report(mode, n, model.config().input_shape(), model.feature_len(),
                                                       cfg.channel, class_counts_of(model.config()));
  nlohmann::json doc{
      {"mode", to_string(mode)},
      {"n_inputs", n},
      {"simulated_seconds", transport.elapsed_seconds()},
      {"analytic_seconds", analytic.total_seconds},
      {"bytes_sent", transport.bytes_sent()},
      {"bytes_received", transport.bytes_received()},
      {"logit_mismatches", mismatches},
      {"channel", to_json(cfg.channel)},
  };
  if (!f.out.empty()) write_json(f.out, doc);
  fmt::print("{} inputs, {} mode: simulated {:.6f} s (analytic {:.6f} s), sent {} B, received {} B\n", n,
             to_string(mode), transport.elapsed_seconds(), analytic.total_seconds, transport.bytes_sent(),
             transport.bytes_received());
  fmt::print("logits identical to local inference: {}\n", mismatches == 0 ? "yes" : "NO");
  return mismatches == 0 ? kExitOk : kExitRuntime;
}

int cmd_analyze(const Flags& f) {
  RunConfig cfg = resolve_config(f);
  const UnitConvention unit = unit_from_string(f.unit);
  if (f.format != "text" && f.format != "json") throw ConfigError("--format must be text or json");

  std::vector<ModelDescriptor> descriptors;
  for (const auto& p : f.descriptors) descriptors.push_back(load_descriptor(p));
  std::uint64_t heads = 0;
  if (!f.checkpoint.empty()) {
    const MtlModel m = model_from_checkpoint(load_checkpoint(f.checkpoint));
    descriptors.push_back(describe_backbone(m, "desk-scale"));
    heads = head_bytes(m);
  }
  if (descriptors.empty()) throw ConfigError("analyze needs --descriptor or --checkpoint");

  const auto rows = render_table4(descriptors, unit);
  std::string text = format_size_table_text(rows, unit);
  nlohmann::json doc{{"table", size_table_json(rows, unit)}, {"comparisons", nlohmann::json::array()}};

  for (const auto& d : descriptors) {
    const std::uint64_t h = d.name == "desk-scale" ? heads : 0;
    const auto reports = compare_paradigms(d, cfg.workload, cfg.channel, h);
    text += "\n" + format_paradigms_text(d, reports, unit);
    nlohmann::json entry = paradigms_json(d, reports, unit);
    nlohmann::json loc = nlohmann::json::object();
    for (std::uint64_t n : {2, 3}) {
      const double gb = static_cast<double>(loc_memory(d, n)) / gigabyte(unit);
      loc[std::to_string(n)] = round_to(gb, 2);
      text += fmt::format("LoC memory, {} tasks: {:.2f} {}\n", n, gb, gb_label(unit));
    }
    entry["loc_memory_gb"] = loc;
    if (f.sc_target_seconds > 0.0 && cfg.workload.n_inputs > 0) {
      const double oh = overhead_to_match(f.sc_target_seconds, cfg.workload.n_inputs, feature_bytes(d), cfg.channel);
      text += fmt::format("SC total of {:.2f} s needs {:.4f} s per-message overhead\n", f.sc_target_seconds, oh);
      entry["sc_overhead_to_match"] = {{"target_seconds", f.sc_target_seconds}, {"overhead_seconds", oh}};
    }
    doc["comparisons"].push_back(entry);
  }

  const std::string rendered = f.format == "json" ? doc.dump(2) + "\n" : text;
  if (f.out.empty()) {
    fmt::print("{}", rendered);
  } else {
    write_file(f.out, std::span(reinterpret_cast<const std::uint8_t*>(rendered.data()), rendered.size()));
  }
  return kExitOk;
}

int cmd_report_delta(const Flags& f) {
  if (f.stl.empty() || f.mtl.empty()) throw ConfigError("report-delta needs --stl and --mtl");
  const RunMetrics stl = run_metrics_from_json(read_json(f.stl));
  const RunMetrics mtl = run_metrics_from_json(read_json(f.mtl));
  const auto rows = delta_rows(stl, mtl);
  fmt::print("{}", format_delta_table(rows));
  if (!f.out.empty()) {
    nlohmann::json doc = nlohmann::json::array();
    for (const auto& r : rows) doc.push_back({{"task", r.task}, {"stl", r.stl}, {"mtl", r.mtl}, {"delta", r.delta}});
    write_json(f.out, doc);
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"mtlsplit: multi-task split computing toolkit"};
  app.require_subcommand(1);
  Flags f;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", f.config, "run config JSON");
    sub->add_option("--seed", f.seed, "top-level seed");
    sub->add_option("--out", f.out, "output path");
  };

  auto* gen = app.add_subcommand("gen-data", "render the synthetic dataset");
  common(gen);

  auto* train_cmd = app.add_subcommand("train", "train STL baselines or the MTL model");
  common(train_cmd);
  train_cmd->add_option("--mode", f.mode, "stl or mtl")->check(CLI::IsMember({"stl", "mtl"}));
  train_cmd->add_option("--data", f.data, "MTLD dataset file");

  auto* ft = app.add_subcommand("finetune", "two-rate fine-tuning of a checkpoint");
  common(ft);
  ft->add_option("--checkpoint", f.checkpoint, "model checkpoint")->required();
  ft->add_option("--data", f.data, "MTLD dataset file");

  auto* serve = app.add_subcommand("serve", "run the head server");
  common(serve);
  serve->add_option("--checkpoint", f.checkpoint, "full or heads-only checkpoint")->required();
  serve->add_option("--mode", f.mode, "sc or roc")->check(CLI::IsMember({"sc", "roc"}));
  serve->add_option("--listen", f.listen, "ADDR:PORT");

  auto* edge = app.add_subcommand("edge", "stream a dataset through the edge client");
  common(edge);
  edge->add_option("--checkpoint", f.checkpoint, "full or backbone-only checkpoint");
  edge->add_option("--mode", f.mode, "sc or roc")->check(CLI::IsMember({"sc", "roc"}));
  edge->add_option("--connect", f.connect, "ADDR:PORT");
  edge->add_option("--data", f.data, "MTLD dataset file");
  edge->add_option("--limit", f.limit, "number of inputs (0 = all)");

  auto* sim = app.add_subcommand("simulate", "edge/server round trips over a simulated channel");
  common(sim);
  sim->add_option("--checkpoint", f.checkpoint, "model checkpoint (default: seeded initialization)");
  sim->add_option("--mode", f.mode, "sc or roc")->check(CLI::IsMember({"sc", "roc"}));
  sim->add_option("--data", f.data, "MTLD dataset file");
  sim->add_option("--limit", f.limit, "number of inputs (default 100)");

  auto* analyze = app.add_subcommand("analyze", "memory and latency report");
  common(analyze);
  analyze->add_option("--descriptor", f.descriptors, "model descriptor JSON (repeatable)");
  analyze->add_option("--checkpoint", f.checkpoint, "add a desk-scale descriptor from a checkpoint");
  analyze->add_option("--unit", f.unit, "si or binary")->check(CLI::IsMember({"si", "binary"}));
  analyze->add_option("--format", f.format, "text or json")->check(CLI::IsMember({"text", "json"}));
  analyze->add_option("--sc-target-seconds", f.sc_target_seconds,
                      "report the per-message overhead that would make SC take this long");

  auto* delta = app.add_subcommand("report-delta", "STL vs MTL accuracy table");
  delta->add_option("--stl", f.stl, "STL metrics JSON")->required();
  delta->add_option("--mtl", f.mtl, "MTL metrics JSON")->required();
  delta->add_option("--out", f.out, "also write the rows as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  for (auto* sub : app.get_subcommands()) {
    if (CLI::Option* o = sub->get_option_no_throw("--seed")) f.seed_opt = o;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(f);
    if (train_cmd->parsed()) return cmd_train(f);
    if (ft->parsed()) return cmd_finetune(f);
    if (serve->parsed()) return cmd_serve(f);
    if (edge->parsed()) return cmd_edge(f);
    if (sim->parsed()) return cmd_simulate(f);
    if (analyze->parsed()) return cmd_analyze(f);
    if (delta->parsed()) return cmd_report_delta(f);
  } catch (const ConfigError& e) {
    spdlog::error("{}", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitRuntime;
  }
  return kExitUsage;
}
