#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <variant>
#include <vector>

namespace flowstop {

/// Shortest prefix length the cascade is ever trained or queried at.
inline constexpr int kMinPrefix = 5;

/// One captured packet. Timestamps stay integral until feature/MLE time.
struct PacketRecord {
  std::string flow_key;
  std::int64_t timestamp_us = 0;
  std::int64_t size = 1;
};

/// A packet sequence of n sizes (bytes) and n-1 inter-arrival gaps (seconds).
///
/// `inter_arrivals[i]` is the gap between packet i and packet i+1. The label is
/// empty for unlabeled flows coming out of `assemble_flows`.
struct Trace {
  std::string label;
  std::vector<double> sizes;
  std::vector<double> inter_arrivals;

  [[nodiscard]] int length() const { return static_cast<int>(sizes.size()); }

  // Throws ValidationError when the length/positivity invariants do not hold.
  void validate() const;

  friend bool operator==(const Trace&, const Trace&) = default;
};

struct LabeledDataset {
  std::vector<Trace> traces;
  std::vector<std::string> class_alphabet;
  std::string provenance;

  /// Common trace length n (0 for an empty dataset).
  [[nodiscard]] int trace_length() const {
    return traces.empty() ? 0 : traces.front().length();
  }
  [[nodiscard]] int class_index(const std::string& label) const;
  [[nodiscard]] std::vector<int> label_indices() const;
  [[nodiscard]] std::vector<std::size_t> class_counts() const;

  void validate() const;

  friend bool operator==(const LabeledDataset&, const LabeledDataset&) = default;
};

/// Point masses over byte counts.
struct CategoricalSizes {
  std::vector<double> values;
  std::vector<double> weights;
};

/// Gaussian mixture over byte counts, rounded to integers and truncated to >= 1.
struct GaussianMixtureSizes {
  std::vector<double> means;
  std::vector<double> stds;
  std::vector<double> weights;
};

using SizeModel = std::variant<CategoricalSizes, GaussianMixtureSizes>;

struct ClassGeneratorSpec {
  std::string label;
  SizeModel size_model;
  double arrival_rate = 1.0;  // 1/s
  std::uint64_t seed = 0;

  void validate() const;
};

struct DroppedFlow {
  std::string flow_key;
  std::size_t packet_count = 0;
};

struct FlowAssembly {
  std::map<std::string, Trace> flows;
  std::vector<DroppedFlow> dropped;
};

/// Groups packets by flow key, orders each group by timestamp and derives the
/// inter-arrival gaps. Groups with fewer than two packets land in `dropped`.
FlowAssembly assemble_flows(const std::vector<PacketRecord>& packets);

/// First j packets of `trace` (j sizes, j-1 gaps). Requires kMinPrefix <= j <= n.
Trace make_prefix(const Trace& trace, int j);

/// Draws `m_per_class` traces of length n per class. Sizes are i.i.d. from the
/// class size model; gaps are i.i.d. exponential, quantized to whole
/// microseconds so that a dataset survives a packet-record round trip exactly.
/// Five device classes with distinct size mixtures and rates from 50 to 400 /s.
std::vector<ClassGeneratorSpec> desk_scale_specs();

LabeledDataset generate_synthetic(const std::vector<ClassGeneratorSpec>& specs, int m_per_class,
                                  int n, std::uint64_t seed);

/// Stratified random partition; fractions must be positive and sum to 1.
std::vector<LabeledDataset> split_dataset(const LabeledDataset& ds,
                                          const std::vector<double>& fractions,
                                          std::uint64_t seed);

/// Flattens a dataset into a packet stream (flow key "<prefix><index>"), one
/// flow per trace starting at `start_us`. Used for replay and round-trip checks.
std::vector<PacketRecord> to_packet_stream(const LabeledDataset& ds,
                                           const std::string& key_prefix = "flow-",
                                           std::int64_t start_us = 0);

/// Deterministic 64-bit seed mixing (splitmix64 finalizer).
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace flowstop
