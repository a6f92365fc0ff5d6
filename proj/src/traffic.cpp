#include "flowstop/traffic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <tuple>
#include <unordered_map>

#include "flowstop/errors.hpp"

namespace flowstop {

namespace {

constexpr double kMicrosPerSecond = 1e6;

void check_weights(const std::vector<double>& weights, const std::string& what) {
  if (weights.empty()) throw ValidationError(what + ": empty mixture");
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw ValidationError(what + ": negative mixture weight");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ValidationError(what + ": mixture weights must sum to 1");
}

double draw_size(const SizeModel& model, std::mt19937_64& rng) {
  return std::visit(
      [&rng](const auto& m) -> double {
        using T = std::decay_t<decltype(m)>;
        std::discrete_distribution<std::size_t> pick(m.weights.begin(), m.weights.end());
        const std::size_t c = pick(rng);
        if constexpr (std::is_same_v<T, CategoricalSizes>) {
          return m.values[c];
        } else {
          std::normal_distribution<double> normal(m.means[c], m.stds[c]);
          for (int attempt = 0; attempt < 64; ++attempt) {
            const double v = std::round(normal(rng));
            if (v >= 1.0) return v;
          }
          return 1.0;
        }
      },
      model);
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

void Trace::validate() const {
  if (sizes.size() < 2) throw ValidationError("trace needs at least 2 packets");
  if (inter_arrivals.size() + 1 != sizes.size()) {
    throw ValidationError("trace must carry exactly one gap fewer than packets");
  }
  for (double s : sizes) {
    if (!(s >= 1.0) || !std::isfinite(s)) throw ValidationError("packet size must be >= 1");
  }
  for (double t : inter_arrivals) {
    if (!(t >= 0.0) || !std::isfinite(t)) throw ValidationError("inter-arrival must be >= 0");
  }
}

int LabeledDataset::class_index(const std::string& label) const {
  const auto it = std::find(class_alphabet.begin(), class_alphabet.end(), label);
  if (it == class_alphabet.end()) throw ValidationError("label not in class alphabet: " + label);
  return static_cast<int>(it - class_alphabet.begin());
}

std::vector<int> LabeledDataset::label_indices() const {
  std::vector<int> out;
  out.reserve(traces.size());
  for (const auto& t : traces) out.push_back(class_index(t.label));
  return out;
}

std::vector<std::size_t> LabeledDataset::class_counts() const {
  std::vector<std::size_t> counts(class_alphabet.size(), 0);
  for (const auto& t : traces) ++counts[static_cast<std::size_t>(class_index(t.label))];
  return counts;
}

void LabeledDataset::validate() const {
  std::vector<std::string> sorted = class_alphabet;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw ValidationError("class alphabet has duplicate labels");
  }
  const int n = trace_length();
  for (const auto& t : traces) {
    t.validate();
    if (t.length() != n) throw ValidationError("all traces must share the same length");
    (void)class_index(t.label);
  }
}

void ClassGeneratorSpec::validate() const {
  if (!(arrival_rate > 0.0) || !std::isfinite(arrival_rate)) {
    throw ValidationError("class '" + label + "': arrival_rate must be positive");
  }
  std::visit(
      [this](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        check_weights(m.weights, "class '" + label + "'");
        if constexpr (std::is_same_v<T, CategoricalSizes>) {
          if (m.values.size() != m.weights.size()) {
            throw ValidationError("class '" + label + "': values/weights length mismatch");
          }
          for (double v : m.values) {
            if (!(v >= 1.0)) throw ValidationError("class '" + label + "': size values must be >= 1");
          }
        } else {
          if (m.means.size() != m.weights.size() || m.stds.size() != m.weights.size()) {
            throw ValidationError("class '" + label + "': mixture component length mismatch");
          }
          for (double s : m.stds) {
            if (!(s >= 0.0)) throw ValidationError("class '" + label + "': negative component std");
          }
        }
      },
      size_model);
}

FlowAssembly assemble_flows(const std::vector<PacketRecord>& packets) {
  if (packets.empty()) throw ValidationError("no packets to assemble");

  std::unordered_map<std::string, std::vector<const PacketRecord*>> groups;
  for (const auto& p : packets) {
    if (p.size < 1) throw ValidationError("packet size must be >= 1");
    if (p.timestamp_us < 0) throw ValidationError("packet timestamp must be non-negative");
    groups[p.flow_key].push_back(&p);
  }

  FlowAssembly out;
  for (auto& [key, group] : groups) {
    if (group.size() < 2) {
      out.dropped.push_back({key, group.size()});
      continue;
    }
    // Full key ordering so that duplicate timestamps land deterministically.
    std::sort(group.begin(), group.end(), [](const PacketRecord* a, const PacketRecord* b) {
      return std::tie(a->timestamp_us, a->size) < std::tie(b->timestamp_us, b->size);
    });
    Trace trace;
    trace.sizes.reserve(group.size());
    trace.inter_arrivals.reserve(group.size() - 1);
    for (std::size_t i = 0; i < group.size(); ++i) {
      trace.sizes.push_back(static_cast<double>(group[i]->size));
      if (i > 0) {
        const auto gap = group[i]->timestamp_us - group[i - 1]->timestamp_us;
        trace.inter_arrivals.push_back(static_cast<double>(gap) / kMicrosPerSecond);
      }
    }
    out.flows.emplace(key, std::move(trace));
  }
  std::sort(out.dropped.begin(), out.dropped.end(),
            [](const DroppedFlow& a, const DroppedFlow& b) { return a.flow_key < b.flow_key; });
  return out;
}

Trace make_prefix(const Trace& trace, int j) {
  if (j < kMinPrefix || j > trace.length()) {
    throw RangeError("prefix length " + std::to_string(j) + " outside [" +
                     std::to_string(kMinPrefix) + ", " + std::to_string(trace.length()) + "]");
  }
  Trace out;
  out.label = trace.label;
  out.sizes.assign(trace.sizes.begin(), trace.sizes.begin() + j);
  out.inter_arrivals.assign(trace.inter_arrivals.begin(), trace.inter_arrivals.begin() + (j - 1));
  return out;
}

std::vector<ClassGeneratorSpec> desk_scale_specs() {
  const auto gm = [](std::vector<double> means, std::vector<double> stds, std::vector<double> weights) {
    return GaussianMixtureSizes{std::move(means), std::move(stds), std::move(weights)};
  };
  return {
      {"bebop", gm({110, 1350}, {12, 60}, {0.55, 0.45}), 50.0, 11},
      {"spark", gm({240, 980}, {20, 50}, {0.7, 0.3}), 100.0, 12},
      {"tello", gm({520, 1480}, {25, 20}, {0.5, 0.5}), 200.0, 13},
      {"wingstand", gm({80, 700}, {8, 40}, {0.35, 0.65}), 300.0, 14},
      {"non-target", gm({400, 1100, 1500}, {60, 120, 10}, {0.3, 0.3, 0.4}), 400.0, 15},
  };
}

LabeledDataset generate_synthetic(const std::vector<ClassGeneratorSpec>& specs, int m_per_class,
                                  int n, std::uint64_t seed) {
  if (specs.empty()) throw ValidationError("no class generator specs");
  if (m_per_class < 1) throw ValidationError("m_per_class must be >= 1");
  if (n < 2) throw ValidationError("trace length n must be >= 2");
  for (const auto& s : specs) s.validate();

  LabeledDataset ds;
  ds.provenance = "synthetic: seed=" + std::to_string(seed) +
                  " m_per_class=" + std::to_string(m_per_class) + " n=" + std::to_string(n);
  for (const auto& s : specs) ds.class_alphabet.push_back(s.label);
  ds.traces.reserve(specs.size() * static_cast<std::size_t>(m_per_class));

  for (std::size_t c = 0; c < specs.size(); ++c) {
    const auto& spec = specs[c];
    std::mt19937_64 rng(mix_seed(mix_seed(seed, c), spec.seed));
    std::exponential_distribution<double> gap(spec.arrival_rate);
    for (int i = 0; i < m_per_class; ++i) {
      Trace t;
      t.label = spec.label;
      t.sizes.resize(static_cast<std::size_t>(n));
      t.inter_arrivals.resize(static_cast<std::size_t>(n - 1));
      for (auto& s : t.sizes) s = draw_size(spec.size_model, rng);
      for (auto& g : t.inter_arrivals) g = std::round(gap(rng) * kMicrosPerSecond) / kMicrosPerSecond;
      ds.traces.push_back(std::move(t));
    }
  }
  return ds;
}

std::vector<LabeledDataset> split_dataset(const LabeledDataset& ds,
                                          const std::vector<double>& fractions,
                                          std::uint64_t seed) {
  if (fractions.empty()) throw ValidationError("no split fractions");
  double total = 0.0;
  for (double f : fractions) {
    if (!(f > 0.0)) throw ValidationError("split fractions must be positive");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ValidationError("split fractions must sum to 1");

  const std::size_t parts = fractions.size();
  std::vector<std::vector<std::size_t>> members(ds.class_alphabet.size());
  for (std::size_t i = 0; i < ds.traces.size(); ++i) {
    members[static_cast<std::size_t>(ds.class_index(ds.traces[i].label))].push_back(i);
  }

  std::vector<std::vector<std::size_t>> chosen(parts);
  for (std::size_t c = 0; c < members.size(); ++c) {
    auto& idx = members[c];
    if (idx.empty()) continue;
    if (idx.size() < parts) {
      throw ValidationError("class '" + ds.class_alphabet[c] + "' has fewer traces than partitions");
    }
    std::mt19937_64 rng(mix_seed(seed, c));
    std::shuffle(idx.begin(), idx.end(), rng);

    // Largest-remainder apportionment of the class's traces.
    const auto count = static_cast<double>(idx.size());
    std::vector<std::size_t> quota(parts);
    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t assigned = 0;
    for (std::size_t p = 0; p < parts; ++p) {
      const double exact = fractions[p] * count;
      quota[p] = static_cast<std::size_t>(std::floor(exact + 1e-9));
      assigned += quota[p];
      remainders.emplace_back(-(exact - static_cast<double>(quota[p])), p);
    }
    std::sort(remainders.begin(), remainders.end());
    for (std::size_t r = 0; assigned < idx.size(); ++r, ++assigned) ++quota[remainders[r].second];

    std::size_t cursor = 0;
    for (std::size_t p = 0; p < parts; ++p) {
      for (std::size_t q = 0; q < quota[p]; ++q) chosen[p].push_back(idx[cursor++]);
    }
  }

  std::vector<LabeledDataset> out(parts);
  for (std::size_t p = 0; p < parts; ++p) {
    std::sort(chosen[p].begin(), chosen[p].end());
    out[p].class_alphabet = ds.class_alphabet;
    out[p].provenance = ds.provenance + " | split " + std::to_string(p + 1) + "/" +
                        std::to_string(parts) + " seed=" + std::to_string(seed);
    out[p].traces.reserve(chosen[p].size());
    for (std::size_t i : chosen[p]) out[p].traces.push_back(ds.traces[i]);
  }
  return out;
}

std::vector<PacketRecord> to_packet_stream(const LabeledDataset& ds, const std::string& key_prefix,
                                           std::int64_t start_us) {
  std::vector<PacketRecord> out;
  for (std::size_t i = 0; i < ds.traces.size(); ++i) {
    const auto& t = ds.traces[i];
    const std::string key = key_prefix + std::to_string(i);
    std::int64_t ts = start_us;
    for (std::size_t k = 0; k < t.sizes.size(); ++k) {
      if (k > 0) ts += std::llround(t.inter_arrivals[k - 1] * kMicrosPerSecond);
      out.push_back({key, ts, static_cast<std::int64_t>(t.sizes[k])});
    }
  }
  return out;
}

}  // namespace flowstop
