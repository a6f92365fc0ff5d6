#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "flowstop/arrival.hpp"
#include "flowstop/features.hpp"
#include "flowstop/learner.hpp"
#include "flowstop/opmode.hpp"
#include "flowstop/traffic.hpp"

namespace flowstop::io {

using nlohmann::json;

// Every artifact carries "format_version": kFormatVersion. Doubles are written
// in shortest round-trip form, so reading back reproduces them bit for bit.

struct PacketStream {
  std::vector<PacketRecord> packets;
  std::map<std::string, std::string> labels;  // optional per-flow ground truth
  std::size_t malformed = 0;
};

/// Parses JSON Lines packet records {"flow","ts_us","size"[,"label"]}. A leading
/// {"format_version":1} header line is accepted. Malformed lines are skipped and
/// counted.
PacketStream read_packets(std::istream& in);
PacketStream read_packets(const std::filesystem::path& path);
std::string packets_to_jsonl(const std::vector<PacketRecord>& packets,
                             const std::map<std::string, std::string>& labels = {});

json dataset_to_json(const LabeledDataset& ds);
LabeledDataset dataset_from_json(const json& j);

json generator_specs_to_json(const std::vector<ClassGeneratorSpec>& specs, int m_per_class, int n);
struct GeneratorFile {
  std::vector<ClassGeneratorSpec> specs;
  int m_per_class = 0;
  int n = 0;
};
GeneratorFile generator_specs_from_json(const json& j);

json subset_model_to_json(const SubsetModel& model);
SubsetModel subset_model_from_json(const json& j);

json cascade_to_json(const CascadeModel& model);
CascadeModel cascade_from_json(const json& j);

json forest_to_json(const ForestModel& forest);
ForestModel forest_from_json(const json& j);

/// Per-class precision/recall/FDR/FNR/F plus overall accuracy and error.
json metrics_to_json(const Metrics& m, const std::vector<std::string>& labels);

/// Confusion matrix in the layout rows = true, columns = predicted, with a
/// recall/FNR column pair, precision/FDR rows and the overall accuracy cell.
std::string confusion_csv(const Metrics& m, const std::vector<std::string>& labels);

/// m x 24 design matrix with the fixed feature-name header plus a label column.
std::string design_matrix_csv(const DesignMatrix& dm, const std::vector<std::string>& labels);

std::string goodness_of_fit_csv(const std::vector<FitReport>& rows);

std::string read_text(const std::filesystem::path& path);
json read_json(const std::filesystem::path& path);

/// Writes to a sibling temporary file and renames it into place.
void write_atomic(const std::filesystem::path& path, const std::string& contents);
void write_json(const std::filesystem::path& path, const json& j);

/// 64-bit FNV-1a of a file's bytes, hex encoded.
std::string file_hash(const std::filesystem::path& path);

/// Fixed-precision decimal for CSV cells (17 significant digits).
std::string fmt_double(double v);

}  // namespace flowstop::io
