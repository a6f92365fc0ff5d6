#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>

#include "flowstop/arrival.hpp"
#include "flowstop/detector.hpp"
#include "flowstop/errors.hpp"
#include "flowstop/features.hpp"
#include "flowstop/io.hpp"
#include "flowstop/learner.hpp"
#include "flowstop/opmode.hpp"
#include "flowstop/traffic.hpp"

namespace fs = std::filesystem;
using namespace flowstop;
using nlohmann::json;

namespace {

constexpr int kExitValidation = 1;
constexpr int kExitArtifact = 2;
constexpr int kExitInvariant = 3;

struct Globals {
  std::uint64_t seed = 0;
  int threads = 1;
  int format_version = kFormatVersion;
  std::string manifest;
};

// Files touched by one run, for the manifest.
struct RunLog {
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::vector<std::string> timing_outputs;  // wall-clock content, not reproducible
  std::string primary;                      // names the default manifest

  void in(const std::string& p) { inputs.push_back(p); }
  void out(const std::string& p, const std::string& contents) {
    io::write_atomic(p, contents);
    outputs.push_back(p);
  }
  void out_json(const std::string& p, const json& j) { out(p, j.dump() + "\n"); }
  void out_timing(const std::string& p, const std::string& contents) {
    io::write_atomic(p, contents);
    timing_outputs.push_back(p);
  }
};

LabeledDataset load_dataset(const std::string& path, RunLog& log) {
  log.in(path);
  return io::dataset_from_json(io::read_json(path));
}

CascadeModel load_cascade(const std::string& path, RunLog& log) {
  log.in(path);
  return io::cascade_from_json(io::read_json(path));
}

/// "start:stop:step" or a comma list; empty means the default stride-5 grid.
std::vector<int> parse_grid(const std::string& text, int n) {
  if (text.empty()) return default_grid(n);
  std::vector<int> grid;
  try {
    if (text.find(':') != std::string::npos) {
      std::vector<int> parts;
      std::stringstream ss(text);
      std::string item;
      while (std::getline(ss, item, ':')) parts.push_back(std::stoi(item));
      if (parts.size() != 3 || parts[2] < 1) throw ValidationError("grid must be start:stop:step");
      for (int j = parts[0]; j <= parts[1]; j += parts[2]) grid.push_back(j);
    } else {
      std::stringstream ss(text);
      std::string item;
      while (std::getline(ss, item, ',')) grid.push_back(std::stoi(item));
    }
  } catch (const std::logic_error&) {
    throw ValidationError("cannot parse grid '" + text + "'");
  }
  if (grid.empty()) throw ValidationError("empty grid");
  return grid;
}

FeatureCostProfile load_costs(const std::string& path, RunLog& log) {
  if (path.empty()) return FeatureCostProfile::reference();
  log.in(path);
  std::istringstream in(io::read_text(path));
  FeatureCostProfile p;
  std::string line;
  std::getline(in, line);  // header
  std::array<bool, kNumFunctions> seen{};
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw ArtifactError("malformed cost row: " + line);
    const std::string name = line.substr(0, comma);
    bool found = false;
    for (int f = 0; f < kNumFunctions; ++f) {
      if (function_name(static_cast<FeatureFunction>(f)) == name) {
        p.micros[static_cast<std::size_t>(f)] = std::stod(line.substr(comma + 1));
        seen[static_cast<std::size_t>(f)] = found = true;
      }
    }
    if (!found) throw ArtifactError("unknown feature function in cost file: " + name);
  }
  if (!std::all_of(seen.begin(), seen.end(), [](bool b) { return b; })) {
    throw ArtifactError("cost file must list all 12 functions");
  }
  p.validate();
  return p;
}

double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

// ---------------------------------------------------------------- synth

struct SynthOptions {
  std::string spec;
  std::string preset = "desk";
  int m = 0;
  int n = 0;
  std::string out;
  std::string packets;
  std::string spec_out;
};

void cmd_synth(const SynthOptions& o, const Globals& g, RunLog& log) {
  log.primary = o.out;
  std::vector<ClassGeneratorSpec> specs;
  int m = 0, n = 0;
  if (!o.spec.empty()) {
    log.in(o.spec);
    const auto file = io::generator_specs_from_json(io::read_json(o.spec));
    specs = file.specs;
    m = file.m_per_class;
    n = file.n;
  } else if (o.preset == "desk") {
    specs = desk_scale_specs();
    m = 3000;
    n = 200;
  } else if (o.preset == "opmode") {
    specs = mode_generator_specs(ModeAlphabet::standard());
    m = 100;
    n = kDefaultModePrefix;
  } else {
    throw ValidationError("unknown preset '" + o.preset + "' (desk, opmode)");
  }
  if (o.m > 0) m = o.m;
  if (o.n > 0) n = o.n;
  LabeledDataset ds = generate_synthetic(specs, m, n, g.seed);
  log.out_json(o.out, io::dataset_to_json(ds));
  if (!o.spec_out.empty()) log.out_json(o.spec_out, io::generator_specs_to_json(specs, m, n));
  if (!o.packets.empty()) {
    std::map<std::string, std::string> labels;
    for (std::size_t i = 0; i < ds.traces.size(); ++i) labels["flow-" + std::to_string(i)] = ds.traces[i].label;
    log.out(o.packets, io::packets_to_jsonl(to_packet_stream(ds), labels));
  }
  std::cerr << "synth: " << ds.traces.size() << " traces of " << n << " packets, "
            << ds.class_alphabet.size() << " classes\n";
}

// ---------------------------------------------------------------- ingest

struct IngestOptions {
  std::string packets;
  int n = 0;
  std::string out;
  std::string design_csv;
  int j = 0;
  std::string gof_csv;
};

void cmd_ingest(const IngestOptions& o, RunLog& log) {
  log.primary = o.out;
  log.in(o.packets);
  const auto stream = io::read_packets(o.packets);
  if (stream.malformed) std::cerr << "ingest: skipped " << stream.malformed << " malformed lines\n";
  const auto assembled = assemble_flows(stream.packets);
  if (!assembled.dropped.empty()) {
    std::cerr << "ingest: dropped " << assembled.dropped.size() << " single-packet flows\n";
  }
  LabeledDataset ds;
  std::size_t unlabeled = 0, short_flows = 0;
  for (const auto& [key, flow] : assembled.flows) {
    const auto it = stream.labels.find(key);
    if (it == stream.labels.end()) {
      ++unlabeled;
      continue;
    }
    if (flow.length() < o.n) {
      ++short_flows;
      continue;
    }
    Trace t = make_prefix(flow, o.n);
    t.label = it->second;
    ds.traces.push_back(std::move(t));
    if (std::find(ds.class_alphabet.begin(), ds.class_alphabet.end(), it->second) == ds.class_alphabet.end()) {
      ds.class_alphabet.push_back(it->second);
    }
  }
  if (unlabeled) std::cerr << "ingest: skipped " << unlabeled << " unlabeled flows\n";
  if (short_flows) std::cerr << "ingest: skipped " << short_flows << " flows shorter than " << o.n << "\n";
  std::sort(ds.class_alphabet.begin(), ds.class_alphabet.end());
  ds.provenance = "ingest " + fs::path(o.packets).filename().string();
  ds.validate();
  log.out_json(o.out, io::dataset_to_json(ds));
  if (!o.design_csv.empty()) {
    log.out(o.design_csv, io::design_matrix_csv(design_matrix(ds, o.j > 0 ? o.j : o.n), ds.class_alphabet));
  }
  if (!o.gof_csv.empty()) log.out(o.gof_csv, io::goodness_of_fit_csv(goodness_of_fit(ds)));
  std::cerr << "ingest: " << ds.traces.size() << " traces, " << ds.class_alphabet.size() << " classes\n";
}

// ---------------------------------------------------------------- train

struct TrainOptions {
  std::string data;
  std::string grid;
  std::string lambda0 = "1e-3";
  double test_fraction = 0.2;
  double val_fraction = 0.25;
  std::string costs;
  std::string model;
  std::string report;
  std::string lambda_report;
};

void cmd_train(const TrainOptions& o, const Globals& g, RunLog& log) {
  log.primary = o.model;
  const LabeledDataset ds = load_dataset(o.data, log);
  const int n = ds.trace_length();
  const auto grid = parse_grid(o.grid, n);

  LabeledDataset train = ds, test;
  if (o.test_fraction > 0) {
    auto parts = split_dataset(ds, {1.0 - o.test_fraction, o.test_fraction}, g.seed);
    train = std::move(parts[0]);
    test = std::move(parts[1]);
  }
  CascadeOptions opt;
  opt.costs = load_costs(o.costs, log);
  opt.seed = g.seed;
  opt.threads = g.threads;
  if (o.lambda0 == "auto") {
    auto parts = split_dataset(train, {1.0 - o.val_fraction, o.val_fraction}, mix_seed(g.seed, 1));
    const auto sel = select_lambda0(parts[0], parts[1], grid, default_lambda_grid(), opt);
    opt.lambda0 = sel.lambda0;
    std::cerr << "train: selected lambda0 = " << sel.lambda0 << "\n";
    if (!o.lambda_report.empty()) {
      std::ostringstream csv;
      csv << "lambda0,validation_accuracy\n";
      for (std::size_t i = 0; i < sel.candidates.size(); ++i) {
        csv << io::fmt_double(sel.candidates[i]) << ',' << io::fmt_double(sel.validation_accuracy[i]) << '\n';
      }
      log.out(o.lambda_report, csv.str());
    }
  } else {
    try {
      opt.lambda0 = std::stod(o.lambda0);
    } catch (const std::logic_error&) {
      throw ValidationError("lambda0 must be a number or 'auto'");
    }
  }
  const CascadeModel cascade = train_cascade(train, grid, opt);
  log.out_json(o.model, io::cascade_to_json(cascade));

  if (!o.report.empty()) {
    std::ostringstream csv;
    csv << "j,train_acc,test_acc,selected_feature_count\n";
    for (int j : grid) {
      csv << j << ',' << io::fmt_double(evaluate(cascade, train, j).accuracy) << ',';
      if (!test.traces.empty()) csv << io::fmt_double(evaluate(cascade, test, j).accuracy);
      csv << ',' << cascade.at(j).model.selected_features.size() << '\n';
    }
    log.out(o.report, csv.str());
  }
  std::cerr << "train: " << grid.size() << " subsets on " << train.traces.size() << " traces\n";
}

// ---------------------------------------------------------------- evaluate

struct EvaluateOptions {
  std::string model;
  std::string data;
  int j = 0;
  std::string metrics_json;
  std::string confusion_csv;
  std::string accuracy_csv;
  std::string gof_csv;
};

void cmd_evaluate(const EvaluateOptions& o, RunLog& log) {
  const CascadeModel cascade = load_cascade(o.model, log);
  const LabeledDataset ds = load_dataset(o.data, log);
  const int j = o.j > 0 ? o.j : cascade.grid.back();
  const Metrics m = evaluate(cascade, ds, j);
  if (!o.metrics_json.empty()) {
    json report = io::metrics_to_json(m, cascade.class_alphabet);
    report["j"] = j;
    log.out_json(o.metrics_json, report);
  }
  if (!o.confusion_csv.empty()) log.out(o.confusion_csv, io::confusion_csv(m, cascade.class_alphabet));
  if (!o.accuracy_csv.empty()) {
    std::ostringstream csv;
    csv << "j,accuracy,macro_f_measure\n";
    for (int g : cascade.grid) {
      const Metrics mg = evaluate(cascade, ds, g);
      csv << g << ',' << io::fmt_double(mg.accuracy) << ',' << io::fmt_double(mg.macro_f_measure()) << '\n';
    }
    log.out(o.accuracy_csv, csv.str());
  }
  if (!o.gof_csv.empty()) log.out(o.gof_csv, io::goodness_of_fit_csv(goodness_of_fit(ds)));
  std::cout << "accuracy at j=" << j << ": " << m.accuracy << "\n";
}

// ---------------------------------------------------------------- detect

struct DetectOptions {
  std::string model;
  std::string packets;
  double eta = 5.0;
  double beta = 1.0;
  int horizon = 0;
  std::string events;
  bool final_only = false;
  std::string curves;
  std::string curve_flow;
  std::string summary;
};

json decision_event(const DetectorState& st, const CascadeModel& cascade) {
  json e = {{"flow", st.flow_key}, {"k", st.k}};
  if (st.status == DetectionStatus::kDetected) {
    e["status"] = "detected";
    e["label"] = cascade.class_alphabet.at(static_cast<std::size_t>(st.label));
    e["pr"] = st.confidence;
    e["p_star"] = st.stop_packet;
    e["t_p_star_s"] = st.stop_time_s;
    e["forced"] = st.forced;
  } else {
    e["status"] = "deferred";
  }
  e["p_star_projected"] = st.projected_stop;
  return e;
}

void cmd_detect(const DetectOptions& o, RunLog& log) {
  const CascadeModel cascade = load_cascade(o.model, log);
  log.in(o.packets);
  const auto stream = io::read_packets(o.packets);
  DetectorConfig cfg;
  cfg.eta = o.eta;
  cfg.beta = o.beta;
  cfg.horizon = o.horizon;
  cfg.validate();

  std::map<std::string, DetectorState> states;
  std::vector<std::string> order;  // flows by first appearance
  std::ostringstream events, curves;
  curves << "flow,k,p,C1,C2,J\n";
  std::size_t out_of_order = 0, past_decision = 0;

  const auto dump_curve = [&](const DetectorState& st) {
    if (o.curves.empty() || !st.evaluated()) return;
    if (!o.curve_flow.empty() && st.flow_key != o.curve_flow) return;
    for (Eigen::Index i = 0; i < st.curve.total.size(); ++i) {
      curves << st.flow_key << ',' << st.k << ',' << st.curve.first + i << ','
             << io::fmt_double(st.curve.misclass(i)) << ',' << io::fmt_double(st.curve.delay(i)) << ','
             << io::fmt_double(st.curve.total(i)) << '\n';
    }
  };

  for (const auto& p : stream.packets) {
    auto [it, fresh] = states.try_emplace(p.flow_key);
    DetectorState& st = it->second;
    if (fresh) {
      st.flow_key = p.flow_key;
      order.push_back(p.flow_key);
    }
    if (st.status == DetectionStatus::kDetected) {
      ++past_decision;
      continue;
    }
    try {
      step(st, p, cascade, cfg);
    } catch (const OrderingError& e) {
      ++out_of_order;
      continue;
    }
    if (!st.evaluated()) continue;
    dump_curve(st);
    if (!o.final_only || st.status == DetectionStatus::kDetected) {
      events << decision_event(st, cascade).dump() << '\n';
    }
  }
  // Flows that ended before deciding commit at their last packet.
  for (const auto& key : order) {
    DetectorState& st = states.at(key);
    if (st.status == DetectionStatus::kDetected) continue;
    if (!st.evaluated()) {
      events << json{{"flow", key}, {"k", st.k}, {"status", "insufficient"}}.dump() << '\n';
      continue;
    }
    force_detection(st, cascade);
    st.forced = true;
    events << decision_event(st, cascade).dump() << '\n';
  }
  if (stream.malformed) std::cerr << "detect: skipped " << stream.malformed << " malformed lines\n";
  if (out_of_order) std::cerr << "detect: skipped " << out_of_order << " out-of-order packets\n";
  if (past_decision) std::cerr << "detect: ignored " << past_decision << " packets after decisions\n";

  if (!o.events.empty()) log.out(o.events, events.str());
  if (!o.curves.empty()) log.out(o.curves, curves.str());

  // Per-class stopping summary, grouped by ground truth when the stream carries labels.
  struct Group {
    std::vector<double> p, t, hit;
  };
  std::map<std::string, Group> groups;
  Group all;
  for (const auto& key : order) {
    const DetectorState& st = states.at(key);
    if (st.status != DetectionStatus::kDetected) continue;
    const std::string predicted = cascade.class_alphabet.at(static_cast<std::size_t>(st.label));
    const auto truth = stream.labels.find(key);
    Group& grp = groups[truth != stream.labels.end() ? truth->second : predicted];
    for (Group* gp : {&grp, &all}) {
      gp->p.push_back(st.stop_packet);
      gp->t.push_back(st.stop_time_s);
      if (truth != stream.labels.end()) gp->hit.push_back(truth->second == predicted ? 1.0 : 0.0);
    }
  }
  std::ostringstream table;
  table << "class,flows,mean_p_star,std_p_star,mean_t_p_star_s,std_t_p_star_s,accuracy,std_accuracy\n";
  const auto row = [&](const std::string& name, const Group& grp) {
    table << name << ',' << grp.p.size() << ',' << io::fmt_double(mean_of(grp.p)) << ','
          << io::fmt_double(std_of(grp.p)) << ',' << io::fmt_double(mean_of(grp.t)) << ','
          << io::fmt_double(std_of(grp.t)) << ',';
    if (!grp.hit.empty()) table << io::fmt_double(mean_of(grp.hit)) << ',' << io::fmt_double(std_of(grp.hit));
    else table << ',';
    table << '\n';
  };
  for (const auto& [name, grp] : groups) row(name, grp);
  row("all", all);
  if (!o.summary.empty()) log.out(o.summary, table.str());
  std::cout << table.str();
}

// ---------------------------------------------------------------- opmode

struct OpmodeOptions {
  std::string data;
  int j = kDefaultModePrefix;
  double lambda0 = 1e-3;
  ForestConfig forest;
  bool tune = false;
  int folds = 10;
  int repeats = 3;
  std::vector<int> depths = {5, 10, 20};
  std::string tuning_report;
  std::string model;
  std::string importance;
  std::string classifier = "rf";
  std::string confusion_json;
  std::string confusion_csv;
};

void cmd_opmode_train(const OpmodeOptions& o, const Globals& g, RunLog& log) {
  log.primary = o.model;
  const LabeledDataset ds = load_dataset(o.data, log);
  ModeAlphabet{ds.class_alphabet}.validate();
  double lambda0 = o.lambda0;
  ForestConfig cfg = o.forest;
  cfg.threads = g.threads;
  json tuning = nullptr;
  if (o.tune) {
    const DesignMatrix dm = design_matrix(ds, o.j);
    const int classes = static_cast<int>(ds.class_alphabet.size());
    const auto lr_cv = tune_opmode_lambda0(dm, classes, default_lambda_grid(), o.folds, o.repeats, g.seed);
    const auto rf_cv = tune_forest_depth(dm, classes, o.depths, cfg, o.folds, o.repeats, g.seed);
    lambda0 = lr_cv.best;
    cfg.max_depth = static_cast<int>(rf_cv.best);
    tuning = {{"folds", o.folds},
              {"repeats", o.repeats},
              {"lambda0", {{"candidates", lr_cv.candidates}, {"mean_accuracy", lr_cv.mean_accuracy}}},
              {"max_depth", {{"candidates", rf_cv.candidates}, {"mean_accuracy", rf_cv.mean_accuracy}}}};
    std::cerr << "opmode: tuned lambda0 = " << lambda0 << ", max depth = " << cfg.max_depth << "\n";
    if (!o.tuning_report.empty()) {
      std::ostringstream csv;
      csv << "parameter,value,cv_accuracy\n";
      for (std::size_t i = 0; i < lr_cv.candidates.size(); ++i) {
        csv << "lambda0," << io::fmt_double(lr_cv.candidates[i]) << ',' << io::fmt_double(lr_cv.mean_accuracy[i]) << '\n';
      }
      for (std::size_t i = 0; i < rf_cv.candidates.size(); ++i) {
        csv << "max_depth," << rf_cv.candidates[i] << ',' << io::fmt_double(rf_cv.mean_accuracy[i]) << '\n';
      }
      log.out(o.tuning_report, csv.str());
    }
  }
  const SubsetModel lr = train_opmode_lr(ds, o.j, lambda0);
  const ForestModel rf = train_random_forest(ds, o.j, cfg, g.seed);
  log.out_json(o.model, {{"format_version", kFormatVersion},
                         {"kind", "opmode"},
                         {"j", o.j},
                         {"alphabet", ds.class_alphabet},
                         {"lambda0", lambda0},
                         {"tuning", tuning},
                         {"lr", io::subset_model_to_json(lr)},
                         {"rf", io::forest_to_json(rf)}});
  if (!o.importance.empty()) {
    const Eigen::VectorXd imp = rf_feature_importance(rf);
    std::ostringstream csv;
    csv << "feature,importance\n";
    for (int f = 0; f < kNumFeatures; ++f) {
      csv << feature_name(FeatureId::from_zero_based(f)) << ',' << io::fmt_double(imp(f)) << '\n';
    }
    log.out(o.importance, csv.str());
  }
  std::cerr << "opmode: trained LR and RF (OOB accuracy " << rf.oob_accuracy << ")\n";
}

void cmd_opmode_eval(const OpmodeOptions& o, RunLog& log) {
  log.in(o.model);
  const json mj = io::read_json(o.model);
  if (!mj.contains("kind") || mj.at("kind") != "opmode" || mj.value("format_version", 0) != kFormatVersion) {
    throw ArtifactError("not an opmode model: " + o.model);
  }
  const ModeAlphabet alphabet{mj.at("alphabet").get<std::vector<std::string>>()};
  const int j = mj.at("j").get<int>();
  const LabeledDataset ds = load_dataset(o.data, log);
  const DesignMatrix dm = design_matrix(ds, j);

  std::vector<std::string> predicted, truth;
  if (o.classifier == "lr") {
    const SubsetModel lr = io::subset_model_from_json(mj.at("lr"));
    for (Eigen::Index i = 0; i < dm.X.rows(); ++i) {
      predicted.push_back(alphabet.labels.at(static_cast<std::size_t>(predict_label(lr, dm.X.row(i).transpose()))));
    }
  } else if (o.classifier == "rf") {
    const ForestModel rf = io::forest_from_json(mj.at("rf"));
    for (Eigen::Index i = 0; i < dm.X.rows(); ++i) {
      predicted.push_back(alphabet.labels.at(static_cast<std::size_t>(rf.predict(dm.X.row(i).transpose()))));
    }
  } else {
    throw ValidationError("classifier must be lr or rf");
  }
  for (const auto& t : ds.traces) truth.push_back(t.label);
  const Metrics m = mode_confusion(predicted, truth, alphabet);
  if (!o.confusion_json.empty()) log.out_json(o.confusion_json, io::metrics_to_json(m, alphabet.labels));
  if (!o.confusion_csv.empty()) log.out(o.confusion_csv, io::confusion_csv(m, alphabet.labels));
  std::cout << o.classifier << " accuracy: " << m.accuracy << "\n";
}

// ---------------------------------------------------------------- bench-features

struct BenchOptions {
  int reps = 1000;
  int sample_size = 100;
  std::string out;
  std::string model;
  std::string data;
  std::string timing;
  int trials = 5;
};

void cmd_bench(const BenchOptions& o, const Globals& g, RunLog& log) {
  log.primary = o.out;
  const FeatureCostProfile p = profile_feature_costs(o.reps, o.sample_size, g.seed);
  std::ostringstream csv;
  csv << "function,mean_us\n";
  for (int f = 0; f < kNumFunctions; ++f) {
    csv << function_name(static_cast<FeatureFunction>(f)) << ',' << io::fmt_double(p.micros[static_cast<std::size_t>(f)])
        << '\n';
  }
  log.out_timing(o.out, csv.str());

  if (o.timing.empty()) return;
  if (o.model.empty() || o.data.empty()) throw ValidationError("--timing needs --model and --data");
  const CascadeModel cascade = load_cascade(o.model, log);
  const LabeledDataset ds = load_dataset(o.data, log);
  std::array<bool, kNumFeatures> all{};
  all.fill(true);
  std::ostringstream t;
  t << "packet_count,all_features_us,selected_features_us,selected_count\n";
  for (int j : cascade.grid) {
    if (j > ds.trace_length()) break;
    std::vector<Trace> prefixes;
    for (const auto& tr : ds.traces) prefixes.push_back(make_prefix(tr, j));
    const auto mask = cascade.at(j).model.selection_mask();
    t << j << ',' << io::fmt_double(time_feature_generation(prefixes, all, o.trials)) << ','
      << io::fmt_double(time_feature_generation(prefixes, mask, o.trials)) << ','
      << cascade.at(j).model.selected_features.size() << '\n';
  }
  log.out_timing(o.timing, t.str());
}

// ---------------------------------------------------------------- driver

json manifest_of(const std::string& command, const std::vector<std::string>& args, const CLI::App& app,
                 const Globals& g, const RunLog& log, double wall_s) {
  json inputs = json::array(), outputs = json::array();
  for (const auto& p : log.inputs) inputs.push_back({{"path", p}, {"hash", io::file_hash(p)}});
  for (const auto& p : log.outputs) outputs.push_back({{"path", p}, {"hash", io::file_hash(p)}, {"timing", false}});
  for (const auto& p : log.timing_outputs) {
    outputs.push_back({{"path", p}, {"hash", io::file_hash(p)}, {"timing", true}});
  }
  return {{"format_version", kFormatVersion},
          {"command", command},
          {"args", args},
          {"cwd", fs::current_path().string()},
          {"config", app.config_to_str(true, false)},
          {"seed", g.seed},
          {"threads", g.threads},
          {"inputs", inputs},
          {"outputs", outputs},
          {"timings", {{"wall_s", wall_s}}}};
}

int run(const std::vector<std::string>& args);

int replay(const std::string& manifest_path) {
  const json m = io::read_json(manifest_path);
  if (m.value("format_version", 0) != kFormatVersion || !m.contains("args")) {
    throw ArtifactError("not a run manifest: " + manifest_path);
  }
  const fs::path cwd = fs::current_path();
  fs::current_path(m.at("cwd").get<std::string>());
  const int code = run(m.at("args").get<std::vector<std::string>>());
  int mismatches = 0;
  if (code == 0) {
    for (const auto& out : m.at("outputs")) {
      if (out.at("timing").get<bool>()) continue;
      const auto path = out.at("path").get<std::string>();
      const bool same = fs::exists(path) && io::file_hash(path) == out.at("hash").get<std::string>();
      std::cout << (same ? "identical " : "DIFFERS   ") << path << "\n";
      mismatches += !same;
    }
  }
  fs::current_path(cwd);
  if (code != 0) return code;
  return mismatches ? kExitInvariant : 0;
}

int dispatch(const std::vector<std::string>& args) {
  CLI::App app{"Delay-aware encrypted-traffic flow classification"};
  app.require_subcommand(1);
  app.set_config("--config", "", "TOML key/value file with option defaults");
  Globals g;
  app.add_option("--seed", g.seed, "Master random seed")->capture_default_str();
  app.add_option("--threads", g.threads, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--format-version", g.format_version, "Artifact format version")->capture_default_str();
  app.add_option("--manifest", g.manifest, "Run manifest path (default: <first output>.manifest.json)");

  SynthOptions so;
  auto* synth = app.add_subcommand("synth", "Generate a labeled synthetic dataset");
  synth->add_option("--spec", so.spec, "Generator spec JSON")->check(CLI::ExistingFile);
  synth->add_option("--preset", so.preset, "desk or opmode")->capture_default_str();
  synth->add_option("--m", so.m, "Traces per class (overrides the spec)");
  synth->add_option("--n", so.n, "Packets per trace (overrides the spec)");
  synth->add_option("--out", so.out, "Dataset JSON")->required();
  synth->add_option("--packets", so.packets, "Also write a labeled JSONL packet stream");
  synth->add_option("--spec-out", so.spec_out, "Write the generator spec used");

  IngestOptions io_;
  auto* ingest = app.add_subcommand("ingest", "Assemble a labeled packet stream into a dataset");
  ingest->add_option("--packets", io_.packets, "JSONL packet stream")->required();
  ingest->add_option("--n", io_.n, "Trace length")->required();
  ingest->add_option("--out", io_.out, "Dataset JSON")->required();
  ingest->add_option("--design-csv", io_.design_csv, "Design matrix CSV");
  ingest->add_option("--j", io_.j, "Prefix length for the design matrix (default n)");
  ingest->add_option("--gof-csv", io_.gof_csv, "Per-class exponential fit and KS/CvM");

  TrainOptions to;
  auto* train = app.add_subcommand("train", "Train the prefix-length cascade");
  train->add_option("--data", to.data, "Dataset JSON")->required();
  train->add_option("--grid", to.grid, "start:stop:step or comma list (default 5:n:5)");
  train->add_option("--lambda0", to.lambda0, "Penalty scale or 'auto'")->capture_default_str();
  train->add_option("--test-fraction", to.test_fraction, "Held-out share for the report")->capture_default_str();
  train->add_option("--val-fraction", to.val_fraction, "Validation share for --lambda0 auto")->capture_default_str();
  train->add_option("--costs", to.costs, "Feature cost CSV from bench-features");
  train->add_option("--model", to.model, "Cascade JSON")->required();
  train->add_option("--report", to.report, "Accuracy-vs-j CSV");
  train->add_option("--lambda-report", to.lambda_report, "Validation accuracy per lambda0 candidate");

  EvaluateOptions eo;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Score a cascade on a labeled dataset");
  evaluate_cmd->add_option("--model", eo.model, "Cascade JSON")->required();
  evaluate_cmd->add_option("--data", eo.data, "Dataset JSON")->required();
  evaluate_cmd->add_option("--j", eo.j, "Prefix length (default: last grid point)");
  evaluate_cmd->add_option("--metrics-json", eo.metrics_json, "Metrics JSON");
  evaluate_cmd->add_option("--confusion-csv", eo.confusion_csv, "Confusion matrix CSV");
  evaluate_cmd->add_option("--accuracy-csv", eo.accuracy_csv, "Accuracy per grid point");
  evaluate_cmd->add_option("--gof-csv", eo.gof_csv, "Per-class exponential fit and KS/CvM");

  DetectOptions dopt;
  auto* detect = app.add_subcommand("detect", "Delay-aware detection over a packet stream");
  detect->add_option("--model", dopt.model, "Cascade JSON")->required();
  detect->add_option("--packets", dopt.packets, "JSONL packet stream")->required();
  detect->add_option("--eta", dopt.eta, "Similarity sigmoid sharpness")->capture_default_str();
  detect->add_option("--beta", dopt.beta, "Delay cost per second")->capture_default_str();
  detect->add_option("--horizon", dopt.horizon, "Stopping horizon (default: trace length)");
  detect->add_option("--events", dopt.events, "JSONL decision events");
  detect->add_flag("--final-only", dopt.final_only, "Only emit the committing event per flow");
  detect->add_option("--curves", dopt.curves, "Cost-curve CSV (flow,k,p,C1,C2,J)");
  detect->add_option("--curve-flow", dopt.curve_flow, "Restrict --curves to one flow");
  detect->add_option("--summary", dopt.summary, "Per-class detection summary CSV");

  OpmodeOptions oo;
  auto* opmode = app.add_subcommand("opmode", "Operation-mode classifiers");
  opmode->require_subcommand(1);
  auto* op_train = opmode->add_subcommand("train", "Train LR and RF mode classifiers");
  op_train->add_option("--data", oo.data, "Mode dataset JSON")->required();
  op_train->add_option("--j", oo.j, "Prefix length")->capture_default_str();
  op_train->add_option("--lambda0", oo.lambda0, "LR penalty scale")->capture_default_str();
  op_train->add_option("--trees", oo.forest.trees, "Forest size")->capture_default_str();
  op_train->add_option("--max-depth", oo.forest.max_depth, "Tree depth limit")->capture_default_str();
  op_train->add_option("--features-per-split", oo.forest.features_per_split, "Candidates per split")
      ->capture_default_str();
  op_train->add_flag("--tune", oo.tune, "Pick lambda0 and max depth by repeated k-fold cross validation");
  op_train->add_option("--folds", oo.folds, "Cross-validation folds")->capture_default_str();
  op_train->add_option("--repeats", oo.repeats, "Cross-validation repeats")->capture_default_str();
  op_train->add_option("--depths", oo.depths, "Max-depth candidates for --tune")->capture_default_str();
  op_train->add_option("--tuning-report", oo.tuning_report, "Cross-validation accuracy CSV");
  op_train->add_option("--model", oo.model, "Opmode model JSON")->required();
  op_train->add_option("--importance", oo.importance, "Gini importance CSV");
  auto* op_eval = opmode->add_subcommand("eval", "Confusion report of a mode classifier");
  op_eval->add_option("--model", oo.model, "Opmode model JSON")->required();
  op_eval->add_option("--data", oo.data, "Mode dataset JSON")->required();
  op_eval->add_option("--classifier", oo.classifier, "lr or rf")->capture_default_str();
  op_eval->add_option("--confusion-json", oo.confusion_json, "Confusion report JSON");
  op_eval->add_option("--confusion-csv", oo.confusion_csv, "Confusion matrix CSV");

  BenchOptions bo;
  auto* bench = app.add_subcommand("bench-features", "Time the feature functions");
  bench->add_option("--reps", bo.reps, "Calls per function (>= 100)")->capture_default_str();
  bench->add_option("--sample-size", bo.sample_size, "Sample length")->capture_default_str();
  bench->add_option("--out", bo.out, "Cost CSV (function,mean_us)")->required();
  bench->add_option("--model", bo.model, "Cascade whose selections are timed");
  bench->add_option("--data", bo.data, "Dataset whose prefixes are featurized");
  bench->add_option("--timing", bo.timing, "Total time vs packet count CSV");
  bench->add_option("--trials", bo.trials, "Timing repetitions (min is kept)")->capture_default_str();

  std::string manifest_in;
  auto* replay_cmd = app.add_subcommand("replay", "Re-run a manifest and compare artifact hashes");
  replay_cmd->add_option("manifest", manifest_in, "Run manifest JSON")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }
  if (g.format_version != kFormatVersion) {
    throw ValidationError("unsupported --format-version " + std::to_string(g.format_version));
  }
  if (replay_cmd->parsed()) return replay(manifest_in);

  RunLog log;
  std::string command;
  const auto t0 = std::chrono::steady_clock::now();
  if (synth->parsed()) {
    command = "synth";
    cmd_synth(so, g, log);
  } else if (ingest->parsed()) {
    command = "ingest";
    cmd_ingest(io_, log);
  } else if (train->parsed()) {
    command = "train";
    cmd_train(to, g, log);
  } else if (evaluate_cmd->parsed()) {
    command = "evaluate";
    cmd_evaluate(eo, log);
  } else if (detect->parsed()) {
    command = "detect";
    cmd_detect(dopt, log);
  } else if (op_train->parsed()) {
    command = "opmode train";
    cmd_opmode_train(oo, g, log);
  } else if (op_eval->parsed()) {
    command = "opmode eval";
    cmd_opmode_eval(oo, log);
  } else if (bench->parsed()) {
    command = "bench-features";
    cmd_bench(bo, g, log);
  }
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  std::string manifest = g.manifest;
  if (manifest.empty()) {
    if (log.primary.empty() && !log.outputs.empty()) log.primary = log.outputs.front();
    if (!log.primary.empty()) manifest = log.primary + ".manifest.json";
  }
  if (!manifest.empty()) io::write_json(manifest, manifest_of(command, args, app, g, log, wall));
  return 0;
}

int run(const std::vector<std::string>& args) {
  try {
    return dispatch(args);
  } catch (const ArtifactError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitArtifact;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitArtifact;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: malformed artifact: " << e.what() << "\n";
    return kExitArtifact;
  } catch (const InvariantError& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitInvariant;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const RangeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const OrderingError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitInvariant;
  }
}

}  // namespace

int main(int argc, char** argv) { return run(std::vector<std::string>(argv + 1, argv + argc)); }
