#include "flowstop/io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "flowstop/errors.hpp"

namespace flowstop::io {

namespace {

void check_version(const json& j, const char* what) {
  if (!j.is_object() || !j.contains("format_version")) {
    throw ArtifactError(std::string(what) + ": missing format_version");
  }
  if (j.at("format_version").get<int>() != kFormatVersion) {
    throw ArtifactError(std::string(what) + ": unsupported format_version");
  }
}

json matrix_to_json(const Eigen::MatrixXd& m) {
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  }
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

Eigen::MatrixXd matrix_from_json(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto& data = j.at("data");
  if (!data.is_array() || static_cast<Eigen::Index>(data.size()) != rows * cols) {
    throw ArtifactError("matrix payload has the wrong size");
  }
  Eigen::MatrixXd m(rows, cols);
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[k++].get<double>();
  }
  return m;
}

json vector_to_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::VectorXd vector_from_json(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

json size_model_to_json(const SizeModel& model) {
  return std::visit(
      [](const auto& m) -> json {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, CategoricalSizes>) {
          return {{"kind", "categorical"}, {"values", m.values}, {"weights", m.weights}};
        } else {
          return {{"kind", "gaussian_mixture"}, {"means", m.means}, {"stds", m.stds}, {"weights", m.weights}};
        }
      },
      model);
}

SizeModel size_model_from_json(const json& j) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "categorical") {
    return CategoricalSizes{j.at("values").get<std::vector<double>>(), j.at("weights").get<std::vector<double>>()};
  }
  if (kind == "gaussian_mixture") {
    return GaussianMixtureSizes{j.at("means").get<std::vector<double>>(), j.at("stds").get<std::vector<double>>(),
                                j.at("weights").get<std::vector<double>>()};
  }
  throw ValidationError("unknown size model kind: " + kind);
}

template <typename Fn>
auto artifact_guard(const char* what, Fn&& fn) {
  try {
    return fn();
  } catch (const json::exception& e) {
    throw ArtifactError(std::string(what) + ": " + e.what());
  }
}

}  // namespace

PacketStream read_packets(std::istream& in) {
  PacketStream out;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const json j = json::parse(line, nullptr, false);
    const bool header = first && j.is_object() && j.contains("format_version") && !j.contains("flow");
    first = false;
    if (header) {
      if (!j["format_version"].is_number_integer() || j["format_version"].get<int>() != kFormatVersion) {
        throw ArtifactError("packet stream: unsupported format_version");
      }
      continue;
    }
    if (!j.is_object() || !j.contains("flow") || !j["flow"].is_string() || !j.contains("ts_us") ||
        !j["ts_us"].is_number_integer() || !j.contains("size") || !j["size"].is_number_integer()) {
      ++out.malformed;
      continue;
    }
    PacketRecord p{j["flow"].get<std::string>(), j["ts_us"].get<std::int64_t>(), j["size"].get<std::int64_t>()};
    if (p.timestamp_us < 0 || p.size < 1) {
      ++out.malformed;
      continue;
    }
    if (j.contains("label") && j["label"].is_string()) out.labels[p.flow_key] = j["label"].get<std::string>();
    out.packets.push_back(std::move(p));
  }
  return out;
}

PacketStream read_packets(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ArtifactError("cannot open packet stream: " + path.string());
  return read_packets(in);
}

std::string packets_to_jsonl(const std::vector<PacketRecord>& packets,
                             const std::map<std::string, std::string>& labels) {
  std::string out = json{{"format_version", kFormatVersion}}.dump() + "\n";
  for (const auto& p : packets) {
    json j = {{"flow", p.flow_key}, {"ts_us", p.timestamp_us}, {"size", p.size}};
    if (const auto it = labels.find(p.flow_key); it != labels.end()) j["label"] = it->second;
    out += j.dump();
    out += '\n';
  }
  return out;
}

json dataset_to_json(const LabeledDataset& ds) {
  json traces = json::array();
  for (const auto& t : ds.traces) {
    traces.push_back({{"label", t.label}, {"sizes", t.sizes}, {"inter_arrivals", t.inter_arrivals}});
  }
  return {{"format_version", kFormatVersion},
          {"n", ds.trace_length()},
          {"class_alphabet", ds.class_alphabet},
          {"provenance", ds.provenance},
          {"traces", std::move(traces)}};
}

LabeledDataset dataset_from_json(const json& j) {
  check_version(j, "dataset");
  LabeledDataset ds = artifact_guard("dataset", [&] {
    LabeledDataset out;
    out.class_alphabet = j.at("class_alphabet").get<std::vector<std::string>>();
    out.provenance = j.value("provenance", "");
    for (const auto& t : j.at("traces")) {
      out.traces.push_back({t.at("label").get<std::string>(), t.at("sizes").get<std::vector<double>>(),
                            t.at("inter_arrivals").get<std::vector<double>>()});
    }
    if (!out.traces.empty() && j.at("n").get<int>() != out.trace_length()) {
      throw ArtifactError("dataset: header n does not match the traces");
    }
    return out;
  });
  try {
    ds.validate();
  } catch (const ValidationError& e) {
    throw ArtifactError(std::string("dataset: ") + e.what());
  }
  return ds;
}

json generator_specs_to_json(const std::vector<ClassGeneratorSpec>& specs, int m_per_class, int n) {
  json classes = json::array();
  for (const auto& s : specs) {
    classes.push_back({{"label", s.label},
                       {"arrival_rate", s.arrival_rate},
                       {"seed", s.seed},
                       {"size_model", size_model_to_json(s.size_model)}});
  }
  return {{"format_version", kFormatVersion}, {"m_per_class", m_per_class}, {"n", n}, {"classes", classes}};
}

GeneratorFile generator_specs_from_json(const json& j) {
  check_version(j, "generator spec");
  return artifact_guard("generator spec", [&] {
    GeneratorFile out;
    out.m_per_class = j.at("m_per_class").get<int>();
    out.n = j.at("n").get<int>();
    for (const auto& c : j.at("classes")) {
      ClassGeneratorSpec s;
      s.label = c.at("label").get<std::string>();
      s.arrival_rate = c.at("arrival_rate").get<double>();
      s.seed = c.value("seed", std::uint64_t{0});
      s.size_model = size_model_from_json(c.at("size_model"));
      out.specs.push_back(std::move(s));
    }
    return out;
  });
}

json subset_model_to_json(const SubsetModel& model) {
  return {{"j", model.j},
          {"num_classes", model.num_classes},
          {"weights", matrix_to_json(model.weights)},
          {"standardization",
           {{"mean", vector_to_json(model.standardization.mean)},
            {"scale", vector_to_json(model.standardization.scale)},
            {"constant", model.standardization.constant}}},
          {"lambda", vector_to_json(model.lambda)},
          {"selected_features", model.selected_features}};
}

SubsetModel subset_model_from_json(const json& j) {
  return artifact_guard("subset model", [&] {
    SubsetModel m;
    m.j = j.at("j").get<int>();
    m.num_classes = j.at("num_classes").get<int>();
    m.weights = matrix_from_json(j.at("weights"));
    const auto& s = j.at("standardization");
    m.standardization.mean = vector_from_json(s.at("mean"));
    m.standardization.scale = vector_from_json(s.at("scale"));
    m.standardization.constant = s.at("constant").get<std::vector<bool>>();
    m.lambda = vector_from_json(j.at("lambda"));
    m.selected_features = j.at("selected_features").get<std::vector<int>>();
    if (m.weights.rows() != m.num_classes || m.weights.cols() != kNumFeatures + 1 ||
        m.standardization.mean.size() != kNumFeatures || m.standardization.scale.size() != kNumFeatures ||
        m.standardization.constant.size() != kNumFeatures || m.lambda.size() != kNumFeatures) {
      throw ArtifactError("subset model has inconsistent shapes");
    }
    return m;
  });
}

json cascade_to_json(const CascadeModel& model) {
  json subsets = json::array();
  for (int j : model.grid) {
    const auto& e = model.at(j);
    subsets.push_back({{"j", j},
                       {"model", subset_model_to_json(e.model)},
                       {"expected_cost", vector_to_json(e.expected_cost)},
                       {"train_features", matrix_to_json(e.train_features)},
                       {"train_labels", e.train_labels}});
  }
  return {{"format_version", model.format_version},
          {"kind", "cascade"},
          {"class_alphabet", model.class_alphabet},
          {"trace_length", model.trace_length},
          {"min_prefix", model.min_prefix},
          {"lambda0", model.lambda0},
          {"seed", model.seed},
          {"grid", model.grid},
          {"arrivals", {{"rates", model.arrivals.rates}, {"sample_counts", model.arrivals.sample_counts}}},
          {"subsets", std::move(subsets)}};
}

CascadeModel cascade_from_json(const json& j) {
  check_version(j, "cascade model");
  CascadeModel m = artifact_guard("cascade model", [&] {
    if (j.value("kind", "") != "cascade") throw ArtifactError("not a cascade model");
    CascadeModel out;
    out.class_alphabet = j.at("class_alphabet").get<std::vector<std::string>>();
    out.trace_length = j.at("trace_length").get<int>();
    out.min_prefix = j.at("min_prefix").get<int>();
    out.lambda0 = j.at("lambda0").get<double>();
    out.seed = j.at("seed").get<std::uint64_t>();
    out.grid = j.at("grid").get<std::vector<int>>();
    out.arrivals.rates = j.at("arrivals").at("rates").get<std::vector<double>>();
    out.arrivals.sample_counts = j.at("arrivals").at("sample_counts").get<std::vector<std::size_t>>();
    for (const auto& s : j.at("subsets")) {
      CascadeEntry e;
      e.model = subset_model_from_json(s.at("model"));
      e.expected_cost = vector_from_json(s.at("expected_cost"));
      e.train_features = matrix_from_json(s.at("train_features"));
      e.train_labels = s.at("train_labels").get<std::vector<int>>();
      out.subsets.emplace(s.at("j").get<int>(), std::move(e));
    }
    return out;
  });
  m.validate();
  return m;
}

json forest_to_json(const ForestModel& forest) {
  json trees = json::array();
  for (const auto& t : forest.trees) {
    json nodes = json::array();
    for (const auto& n : t.nodes) {
      if (n.feature < 0) {
        nodes.push_back({{"counts", n.class_counts}});
      } else {
        nodes.push_back({{"f", n.feature}, {"t", n.threshold}, {"l", n.left}, {"r", n.right}});
      }
    }
    trees.push_back(std::move(nodes));
  }
  return {{"format_version", kFormatVersion},
          {"kind", "forest"},
          {"num_classes", forest.num_classes},
          {"num_features", forest.num_features},
          {"seed", forest.seed},
          {"config",
           {{"trees", forest.config.trees},
            {"max_depth", forest.config.max_depth},
            {"features_per_split", forest.config.features_per_split},
            {"bootstrap", forest.config.bootstrap},
            {"min_samples_split", forest.config.min_samples_split}}},
          {"importance", vector_to_json(forest.importance)},
          {"oob_accuracy", forest.oob_accuracy},
          {"oob_count", forest.oob_count},
          {"trees", std::move(trees)}};
}

ForestModel forest_from_json(const json& j) {
  check_version(j, "forest model");
  return artifact_guard("forest model", [&] {
    ForestModel f;
    f.num_classes = j.at("num_classes").get<int>();
    f.num_features = j.at("num_features").get<int>();
    f.seed = j.at("seed").get<std::uint64_t>();
    const auto& c = j.at("config");
    f.config.trees = c.at("trees").get<int>();
    f.config.max_depth = c.at("max_depth").get<int>();
    f.config.features_per_split = c.at("features_per_split").get<int>();
    f.config.bootstrap = c.at("bootstrap").get<bool>();
    f.config.min_samples_split = c.at("min_samples_split").get<int>();
    f.importance = vector_from_json(j.at("importance"));
    f.oob_accuracy = j.at("oob_accuracy").get<double>();
    f.oob_count = j.at("oob_count").get<std::size_t>();
    for (const auto& t : j.at("trees")) {
      DecisionTree tree;
      for (const auto& n : t) {
        DecisionTree::Node node;
        if (n.contains("counts")) {
          node.class_counts = n.at("counts").get<std::vector<double>>();
        } else {
          node.feature = n.at("f").get<int>();
          node.threshold = n.at("t").get<double>();
          node.left = n.at("l").get<int>();
          node.right = n.at("r").get<int>();
        }
        tree.nodes.push_back(std::move(node));
      }
      f.trees.push_back(std::move(tree));
    }
    return f;
  });
}

json metrics_to_json(const Metrics& m, const std::vector<std::string>& labels) {
  json per_class = json::array();
  for (int c = 0; c < m.num_classes; ++c) {
    per_class.push_back({{"label", labels.at(static_cast<std::size_t>(c))},
                         {"support", m.support(c)},
                         {"precision", m.precision(c)},
                         {"false_discovery_rate", m.false_discovery_rate(c)},
                         {"recall", m.recall(c)},
                         {"false_negative_rate", m.false_negative_rate(c)},
                         {"f_measure", m.f_measure(c)}});
  }
  json confusion = json::array();
  for (int r = 0; r < m.num_classes; ++r) {
    std::vector<int> row;
    for (int c = 0; c < m.num_classes; ++c) row.push_back(m.confusion(r, c));
    confusion.push_back(row);
  }
  return {{"format_version", kFormatVersion},
          {"labels", labels},
          {"confusion", confusion},
          {"per_class", per_class},
          {"accuracy", m.accuracy},
          {"error", 1.0 - m.accuracy},
          {"macro_f_measure", m.macro_f_measure()}};
}

std::string confusion_csv(const Metrics& m, const std::vector<std::string>& labels) {
  std::ostringstream out;
  out << "true\\predicted";
  for (const auto& l : labels) out << ',' << l;
  out << ",recall,false_negative_rate\n";
  for (int r = 0; r < m.num_classes; ++r) {
    out << labels.at(static_cast<std::size_t>(r));
    for (int c = 0; c < m.num_classes; ++c) out << ',' << m.confusion(r, c);
    out << ',' << fmt_double(m.recall(r)) << ',' << fmt_double(m.false_negative_rate(r)) << '\n';
  }
  out << "precision";
  for (int c = 0; c < m.num_classes; ++c) out << ',' << fmt_double(m.precision(c));
  out << ',' << fmt_double(m.accuracy) << ",\n";
  out << "false_discovery_rate";
  for (int c = 0; c < m.num_classes; ++c) out << ',' << fmt_double(m.false_discovery_rate(c));
  out << ",," << fmt_double(1.0 - m.accuracy) << '\n';
  return out.str();
}

std::string design_matrix_csv(const DesignMatrix& dm, const std::vector<std::string>& labels) {
  std::ostringstream out;
  for (const auto& name : feature_names()) out << name << ',';
  out << "label\n";
  for (Eigen::Index r = 0; r < dm.X.rows(); ++r) {
    for (Eigen::Index c = 0; c < dm.X.cols(); ++c) out << fmt_double(dm.X(r, c)) << ',';
    out << labels.at(static_cast<std::size_t>(dm.labels[static_cast<std::size_t>(r)])) << '\n';
  }
  return out.str();
}

std::string goodness_of_fit_csv(const std::vector<FitReport>& rows) {
  std::ostringstream out;
  out << "class,n,rate,KS,CvM\n";
  for (const auto& r : rows) {
    out << r.label << ',' << r.n << ',' << fmt_double(r.rate) << ',' << fmt_double(r.ks) << ','
        << fmt_double(r.cvm) << '\n';
  }
  return out.str();
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json(const std::filesystem::path& path) {
  const std::string text = read_text(path);
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw ArtifactError("malformed JSON in " + path.string());
  return j;
}

void write_atomic(const std::filesystem::path& path, const std::string& contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ArtifactError("cannot write " + tmp.string());
    out << contents;
    if (!out) throw ArtifactError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_json(const std::filesystem::path& path, const json& j) { write_atomic(path, j.dump() + "\n"); }

std::string file_hash(const std::filesystem::path& path) {
  const std::string bytes = read_text(path);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace flowstop::io
