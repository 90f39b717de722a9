#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "vpit/vpit.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace vpit;

namespace {

constexpr const char* kVersion = "0.1.0";

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kRuntime = 3 };

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::string out = ".";
  std::int64_t seed = -1;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config, "INI config file");
  cmd->add_option("--set", c.overrides, "Override, section.key=value (repeatable)");
  cmd->add_option("-o,--out", c.out, "Output directory");
  cmd->add_option("--seed", c.seed, "Seed for scene generation and training");
}

AppConfig build_config(const Common& c, const std::string& fallback_text = "") {
  AppConfig cfg;
  if (!c.config.empty()) {
    cfg = load_config(c.config);
  } else if (!fallback_text.empty()) {
    std::istringstream is(fallback_text);
    parse_config(cfg, is, "<checkpoint config>");
  }
  for (const auto& o : c.overrides) apply_override(cfg, o);
  if (c.seed >= 0) {
    cfg.scene.seed = static_cast<std::uint64_t>(c.seed);
    cfg.train.seed = static_cast<std::uint64_t>(c.seed);
  }
  cfg.validate();
  return cfg;
}

void write_run_metadata(const fs::path& dir, const std::string& command, const std::vector<std::string>& argv,
                        AppConfig& cfg) {
  fs::create_directories(dir);
  json meta{{"command", command},
            {"argv", argv},
            {"version", kVersion},
            {"compiler", __VERSION__},
            {"scene_seed", cfg.scene.seed},
            {"train_seed", cfg.train.seed},
            {"config", dump_config(cfg)}};
  std::ofstream os(dir / "run.json", std::ios::trunc);
  os << meta.dump(2) << '\n';
}

std::uint64_t split_seed(std::uint64_t base, int split, int index) {
  return mix_seed(base, static_cast<std::uint64_t>(split) * 1000003ULL + static_cast<std::uint64_t>(index));
}

int cmd_gen(const Common& c, const std::vector<std::string>& argv) {
  AppConfig cfg = build_config(c);
  const fs::path root(c.out);
  fs::create_directories(root);
  const std::pair<const char*, int> splits[] = {{"train", cfg.dataset.train_sequences},
                                                {"val", cfg.dataset.val_sequences},
                                                {"test", cfg.dataset.test_sequences}};
  int split_id = 0;
  for (const auto& [split, count] : splits) {
    Manifest m;
    m.root = root;
    for (int i = 0; i < count; ++i) {
      SceneConfig sc = cfg.scene;
      sc.seed = split_seed(cfg.scene.seed, split_id, i);
      char name[64];
      std::snprintf(name, sizeof(name), "%s_%03d", split, i);
      const Sequence seq = generate_scene(sc, name);
      m.sequences.push_back(save_sequence(seq, root, std::string(split) + "/" + name));
    }
    write_manifest((root / (std::string(split) + ".manifest")).string(), m);
    std::cout << split << ": " << count << " sequences\n";
    ++split_id;
  }
  write_run_metadata(root, "gen", argv, cfg);
  return kOk;
}

struct TrainArgs {
  std::string data;
  std::string resume;
  std::int64_t steps = -1;
};

int cmd_train(const Common& c, const TrainArgs& a, const std::vector<std::string>& argv) {
  AppConfig cfg = build_config(c);
  if (a.steps >= 0) cfg.train.steps = a.steps;
  const fs::path out(c.out);
  fs::create_directories(out);
  const std::vector<Sequence> data = load_manifest(a.data);
  if (data.empty()) throw DataError("dataset " + a.data + " has no sequences");

  nn::SiamModel model;
  nn::AdamState adam;
  if (!a.resume.empty()) {
    const nn::Checkpoint ck = nn::read_checkpoint(a.resume);
    model = nn::model_from_checkpoint(ck);
    adam = nn::optimizer_from_checkpoint(ck, model);
    std::cout << "resuming at step " << adam.step << '\n';
  } else {
    std::mt19937_64 rng(mix_seed(cfg.train.seed, 0));
    model = nn::SiamModel::random(cfg.pillars.feature_channels, cfg.fgn, rng);
  }

  // Keep the curve consistent with the resumed step: drop later records.
  const fs::path curve = out / "loss_curve.tsv";
  std::vector<std::string> kept;
  if (adam.step > 0 && fs::exists(curve)) {
    std::ifstream is(curve);
    std::string line;
    while (std::getline(is, line)) {
      std::int64_t s = 0;
      if (std::sscanf(line.c_str(), "%ld", &s) == 1 && s <= adam.step) kept.push_back(line);
    }
  }
  std::ofstream loss_os(curve, std::ios::trunc);
  if (!loss_os) throw DataError("cannot write " + curve.string());
  for (const auto& l : kept) loss_os << l << '\n';
  loss_os.precision(9);

  const std::string config_text = dump_config(cfg);
  TrainHooks hooks;
  hooks.on_loss = [&](std::int64_t step, double loss) {
    loss_os << step << '\t' << loss << '\n';
    if (step % 100 == 0) std::cout << "step " << step << " loss " << loss << std::endl;
  };
  hooks.on_checkpoint = [&](std::int64_t step, const nn::SiamModel& m, const nn::AdamState& st) {
    nn::Checkpoint ck;
    ck.config_text = config_text;
    nn::add_model_blobs(ck, m);
    nn::add_optimizer_blobs(ck, m, st);
    try {
      nn::write_checkpoint((out / "model.ckpt").string(), ck);
    } catch (const std::exception& e) {
      throw DataError("step " + std::to_string(step) + ": " + e.what());
    }
  };
  train_loop(data, model, adam, cfg.train, cfg.tracker, cfg.pillars, hooks);
  if (adam.step >= cfg.train.steps && !fs::exists(out / "model.ckpt")) hooks.on_checkpoint(adam.step, model, adam);
  write_run_metadata(out, "train", argv, cfg);
  std::cout << "checkpoint: " << (out / "model.ckpt").string() << '\n';
  return kOk;
}

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string mode = "offline";
  std::string tracker = "vpit";
  std::string latency = "0";
  std::string label = "desk";
  double data_rate = -1.0;
  int jobs = -1;
};

EvalMode parse_mode(const std::string& m) {
  if (m == "offline") return EvalMode::kOffline;
  if (m == "realtime-pred") return EvalMode::kPredictive;
  if (m == "realtime-nonpred") return EvalMode::kNonPredictive;
  throw ConfigError("unknown mode '" + m + "' (offline | realtime-pred | realtime-nonpred)");
}

struct Evaluation {
  AppConfig cfg;
  std::vector<TrackSequence> sequences;
  std::shared_ptr<const nn::SiamModel> model;
};

Evaluation prepare_eval(const Common& c, const EvalArgs& a) {
  Evaluation ev;
  std::string ck_text;
  if (a.tracker == "vpit") {
    if (a.checkpoint.empty()) throw ConfigError("--checkpoint is required with --tracker vpit");
    const nn::Checkpoint ck = nn::read_checkpoint(a.checkpoint);
    ev.model = std::make_shared<const nn::SiamModel>(nn::model_from_checkpoint(ck));
    ck_text = ck.config_text;
  } else if (a.tracker != "gt-echo") {
    throw ConfigError("unknown tracker '" + a.tracker + "' (vpit | gt-echo)");
  }
  ev.cfg = build_config(c, ck_text);
  if (a.data_rate > 0) ev.cfg.eval.data_rate = a.data_rate;
  if (a.jobs >= 0) ev.cfg.eval.jobs = a.jobs;
  if (a.latency == "measured") {
    ev.cfg.eval.measured = true;
  } else {
    try {
      ev.cfg.eval.latency = std::stod(a.latency);
    } catch (const std::exception&) {
      throw ConfigError("invalid --latency '" + a.latency + "' (seconds or 'measured')");
    }
  }
  for (const auto& s : load_manifest(a.data)) {
    for (auto& t : track_sequences(s, ev.cfg.pillars.grid)) {
      t.data_rate = ev.cfg.eval.data_rate;
      ev.sequences.push_back(std::move(t));
    }
  }
  if (ev.sequences.empty()) throw DataError("dataset " + a.data + " has no trackable sequences");
  return ev;
}

EvalSummary run_eval(const Evaluation& ev, const std::string& tracker, const TrackerConfig& tcfg, EvalMode mode) {
  const LatencyModel latency = ev.cfg.eval.measured ? LatencyModel::measured(ev.cfg.eval.data_rate)
                                                    : LatencyModel::injected(ev.cfg.eval.latency, ev.cfg.eval.data_rate);
  if (tracker == "gt-echo") {
    // The echo tracker needs its own sequence's labels, so sequences are
    // evaluated one by one and merged.
    EvalSummary total;
    total.mode = mode;
    std::vector<double> ious, dists;
    std::size_t dropped = 0, droppable = 0, processed = 0;
    std::int64_t busy = 0;
    for (const auto& seq : ev.sequences) {
      auto factory = [&seq] { return std::make_unique<GtEchoTracker>(seq.labels); };
      EvalSummary one = evaluate(factory, {seq}, mode, latency, 1);
      auto& s = one.sequences.front();
      ious.insert(ious.end(), s.ope.ious.begin(), s.ope.ious.end());
      dists.insert(dists.end(), s.ope.distances.begin(), s.ope.distances.end());
      dropped += s.dropped;
      droppable += s.frames - 1;
      processed += s.processed;
      busy += s.busy_ns;
      total.sequences.push_back(std::move(s));
    }
    total.ope = ope_from_errors(std::move(ious), std::move(dists));
    total.drop_percent = droppable ? 100.0 * double(dropped) / double(droppable) : 0.0;
    total.fps = busy > 0 ? double(processed) / (double(busy) * 1e-9) : 0.0;
    return total;
  }
  auto model = ev.model;
  auto pillars = ev.cfg.pillars;
  auto factory = [model, tcfg, pillars] { return std::make_unique<VpitFrameTracker>(model, tcfg, pillars); };
  return evaluate(factory, ev.sequences, mode, latency, ev.cfg.jobs());
}

json sequence_record(const SequenceEval& s, EvalMode mode, double rate, const std::string& label) {
  json r{{"sequence", s.name},       {"mode", to_string(mode)},   {"label", label},
         {"data_rate", rate},        {"frames", s.frames},        {"processed", s.processed},
         {"dropped", s.dropped}};
  if (!s.error.empty()) {
    r["error"] = s.error;
    return r;
  }
  r["success"] = s.ope.success;
  r["precision"] = s.ope.precision;
  r["fps"] = s.busy_ns > 0 ? double(s.processed) / (double(s.busy_ns) * 1e-9) : 0.0;
  r["drop_percent"] = s.frames > 1 ? 100.0 * double(s.dropped) / double(s.frames - 1) : 0.0;
  r["associations"] = s.association;
  r["prediction_frames"] = s.prediction_frames;
  json boxes = json::array();
  for (const auto& b : s.predictions) boxes.push_back(box_json(b));
  r["boxes"] = boxes;
  return r;
}

int cmd_eval(const Common& c, const EvalArgs& a, const std::vector<std::string>& argv) {
  const EvalMode mode = parse_mode(a.mode);
  Evaluation ev = prepare_eval(c, a);
  const EvalSummary sum = run_eval(ev, a.tracker, ev.cfg.tracker, mode);
  const fs::path out(c.out);
  fs::create_directories(out);
  std::ofstream os(out / "results.jsonl", std::ios::app);
  if (!os) throw DataError("cannot write " + (out / "results.jsonl").string());
  for (const auto& s : sum.sequences) write_jsonl(os, sequence_record(s, mode, ev.cfg.eval.data_rate, a.label));
  json summary{{"sequence", "*"},
               {"mode", to_string(mode)},
               {"label", a.label},
               {"tracker", a.tracker},
               {"data_rate", ev.cfg.eval.data_rate},
               {"latency", ev.cfg.eval.measured ? json("measured") : json(ev.cfg.eval.latency)},
               {"success", sum.ope.success},
               {"precision", sum.ope.precision},
               {"fps", sum.fps},
               {"drop_percent", sum.drop_percent},
               {"sequences", sum.sequences.size()}};
  write_jsonl(os, summary);
  write_run_metadata(out, "eval", argv, ev.cfg);
  std::printf("%s success %.2f precision %.2f fps %.1f drop %.1f%%\n", to_string(mode), sum.ope.success,
              sum.ope.precision, sum.fps, sum.drop_percent);
  for (const auto& s : sum.sequences) {
    if (!s.error.empty()) std::fprintf(stderr, "sequence %s failed: %s\n", s.name.c_str(), s.error.c_str());
  }
  return kOk;
}

struct SweepArgs {
  std::string param;
  std::string values;
};

int cmd_sweep(const Common& c, const EvalArgs& a, const SweepArgs& s, const std::vector<std::string>& argv) {
  const auto names = sweep_keys();
  if (std::find(names.begin(), names.end(), s.param) == names.end()) {
    std::string list;
    for (const auto& n : names) list += (list.empty() ? "" : ", ") + n;
    throw ConfigError("unknown hyperparameter '" + s.param + "'; valid names: " + list);
  }
  std::vector<std::string> values;
  std::stringstream vs(s.values);
  for (std::string v; std::getline(vs, v, ',');) {
    if (!v.empty()) values.push_back(v);
  }
  if (values.empty()) throw ConfigError("--values needs at least one value");
  const EvalMode mode = parse_mode(a.mode);
  Evaluation ev = prepare_eval(c, a);
  const fs::path out(c.out);
  fs::create_directories(out);
  std::ofstream os(out / "sweep.tsv", std::ios::trunc);
  os << s.param << "\tsuccess\tprecision\n";
  for (const auto& v : values) {
    AppConfig cfg = ev.cfg;
    set_config(cfg, "tracker." + s.param, v);
    cfg.tracker.validate();
    const EvalSummary sum = run_eval(ev, a.tracker, cfg.tracker, mode);
    char row[256];
    std::snprintf(row, sizeof(row), "%s\t%.4f\t%.4f\n", v.c_str(), sum.ope.success, sum.ope.precision);
    os << row;
    std::cout << row;
  }
  write_run_metadata(out, "sweep", argv, ev.cfg);
  return kOk;
}

struct PlotArgs {
  std::string loss;
  std::string results;
  std::string checkpoint;
  std::string data;
  int sequence = 0;
  int frame = 1;
};

int cmd_plot_data(const Common& c, const PlotArgs& p) {
  const fs::path out(c.out);
  fs::create_directories(out);
  bool did = false;
  if (!p.loss.empty()) {
    std::ifstream is(p.loss);
    if (!is) throw DataError("cannot open " + p.loss);
    std::vector<std::pair<std::int64_t, std::string>> rows;
    std::string line;
    while (std::getline(is, line)) {
      std::int64_t s = 0;
      if (std::sscanf(line.c_str(), "%ld", &s) == 1) rows.emplace_back(s, line);
    }
    std::stable_sort(rows.begin(), rows.end(), [](const auto& x, const auto& y) { return x.first < y.first; });
    std::ofstream os(out / "loss_series.tsv", std::ios::trunc);
    os << "step\tloss\n";
    for (const auto& r : rows) os << r.second << '\n';
    did = true;
  }
  if (!p.results.empty()) {
    std::map<std::pair<std::string, double>, std::vector<json>> groups;
    for (const auto& r : read_jsonl(p.results)) {
      if (r.value("sequence", "") != "*" || r.value("mode", "") == "offline") continue;
      groups[{r.value("label", ""), r.value("data_rate", 0.0)}].push_back(r);
    }
    std::ofstream os(out / "realtime_series.tsv", std::ios::trunc);
    os << "label\tdata_rate\tmode\tlatency\tsuccess\tprecision\tfps\tdrop_percent\n";
    for (const auto& [key, rows] : groups) {
      for (const auto& r : rows) {
        os << key.first << '\t' << key.second << '\t' << r.value("mode", "") << '\t' << r["latency"].dump() << '\t'
           << r.value("success", 0.0) << '\t' << r.value("precision", 0.0) << '\t' << r.value("fps", 0.0) << '\t'
           << r.value("drop_percent", 0.0) << '\n';
      }
    }
    did = true;
  }
  if (!p.checkpoint.empty()) {
    if (p.data.empty()) throw ConfigError("map dumps need --data");
    const nn::Checkpoint ck = nn::read_checkpoint(p.checkpoint);
    auto model = std::make_shared<const nn::SiamModel>(nn::model_from_checkpoint(ck));
    AppConfig cfg = build_config(c, ck.config_text);
    std::vector<TrackSequence> seqs;
    for (const auto& s : load_manifest(p.data)) {
      for (auto& t : track_sequences(s, cfg.pillars.grid)) seqs.push_back(std::move(t));
    }
    if (p.sequence < 0 || p.sequence >= static_cast<int>(seqs.size())) {
      throw ConfigError("--sequence out of range (0.." + std::to_string(seqs.size()) + ")");
    }
    const TrackSequence& seq = seqs[p.sequence];
    if (p.frame < 1 || p.frame >= static_cast<int>(seq.size())) {
      throw ConfigError("--frame out of range (1.." + std::to_string(seq.size() - 1) + ")");
    }
    VpitTracker tracker(model, cfg.tracker, cfg.pillars);
    tracker.init((*seq.clouds)[0], seq.labels[0]);
    StepResult r;
    for (int f = 1; f <= p.frame; ++f) r = tracker.step((*seq.clouds)[f], f == p.frame);
    const StepDiagnostics& d = *r.diagnostics;
    auto dump = [&](const std::string& name, std::size_t rows, std::size_t cols, auto value) {
      std::ofstream os(out / name, std::ios::trunc);
      for (std::size_t y = 0; y < rows; ++y) {
        for (std::size_t x = 0; x < cols; ++x) os << (x ? "\t" : "") << value(y, x);
        os << '\n';
      }
    };
    dump("raw_score.tsv", d.raw_scores.dim(1), d.raw_scores.dim(2),
         [&](std::size_t y, std::size_t x) { return d.raw_scores.at(0, y, x); });
    dump("score_map.tsv", d.peak.map.dim(1), d.peak.map.dim(2),
         [&](std::size_t y, std::size_t x) { return d.peak.map.at(0, y, x); });
    dump("penalty_map.tsv", d.penalty->rows, d.penalty->cols,
         [&](std::size_t y, std::size_t x) { return d.penalty->at(y, x); });
    std::printf("frame %d: peak (%zu, %zu) of %zux%zu, penalty %s\n", p.frame, d.peak.row, d.peak.col,
                d.penalty->rows, d.penalty->cols, to_string(d.penalty->kind));
    did = true;
  }
  if (!did) throw ConfigError("plot-data needs --loss, --results or --checkpoint");
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"VPIT desk-scale single-object 3D tracker"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  const std::vector<std::string> args(argv, argv + argc);

  Common gen_c, train_c, eval_c, sweep_c, plot_c;
  TrainArgs train_a;
  EvalArgs eval_a, sweep_a;
  SweepArgs sweep_s;
  PlotArgs plot_a;

  auto* gen = app.add_subcommand("gen", "Generate a synthetic dataset (train/val/test manifests)");
  add_common(gen, gen_c);

  auto* train = app.add_subcommand("train", "Train a model");
  add_common(train, train_c);
  train->add_option("-d,--data", train_a.data, "Training manifest")->required();
  train->add_option("--steps", train_a.steps, "Total step count (overrides train.steps)");
  train->add_option("--resume", train_a.resume, "Checkpoint to resume from");

  auto add_eval_opts = [](CLI::App* cmd, EvalArgs& e) {
    cmd->add_option("-k,--checkpoint", e.checkpoint, "Model checkpoint");
    cmd->add_option("-d,--data", e.data, "Evaluation manifest")->required();
    cmd->add_option("-m,--mode", e.mode, "offline | realtime-pred | realtime-nonpred");
    cmd->add_option("--tracker", e.tracker, "vpit | gt-echo");
    cmd->add_option("--data-rate", e.data_rate, "Input data rate in Hz");
    cmd->add_option("--latency", e.latency, "Injected per-frame latency in seconds, or 'measured'");
    cmd->add_option("--label", e.label, "Device label stored in result records");
    cmd->add_option("-j,--jobs", e.jobs, "Parallel sequences (0 = all cores)");
  };
  auto* eval = app.add_subcommand("eval", "Evaluate offline or under the real-time protocols");
  add_common(eval, eval_c);
  add_eval_opts(eval, eval_a);

  auto* sweep = app.add_subcommand("sweep", "Sweep one tracker hyperparameter");
  add_common(sweep, sweep_c);
  add_eval_opts(sweep, sweep_a);
  sweep->add_option("-p,--param", sweep_s.param, "Tracker hyperparameter name")->required();
  sweep->add_option("--values", sweep_s.values, "Comma-separated values")->required();

  auto* plot = app.add_subcommand("plot-data", "Emit plot-ready series");
  add_common(plot, plot_c);
  plot->add_option("--loss", plot_a.loss, "Loss curve to pass through");
  plot->add_option("--results", plot_a.results, "results.jsonl to group");
  plot->add_option("-k,--checkpoint", plot_a.checkpoint, "Checkpoint for score/penalty map dumps");
  plot->add_option("-d,--data", plot_a.data, "Manifest for map dumps");
  plot->add_option("--sequence", plot_a.sequence, "Track index for map dumps");
  plot->add_option("--frame", plot_a.frame, "Frame index for map dumps");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) return cmd_gen(gen_c, args);
    if (*train) return cmd_train(train_c, train_a, args);
    if (*eval) return cmd_eval(eval_c, eval_a, args);
    if (*sweep) return cmd_sweep(sweep_c, sweep_a, sweep_s, args);
    if (*plot) return cmd_plot_data(plot_c, plot_a);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const nn::CheckpointError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << '\n';
    return kRuntime;
  }
  return kUsage;
}
