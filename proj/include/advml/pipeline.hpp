#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "advml/attacks.hpp"
#include "advml/classifier.hpp"
#include "advml/error.hpp"
#include "advml/metrics.hpp"
#include "advml/provenance.hpp"

namespace advml {

/// Invalid run configuration; the message names the offending field.
class ConfigError : public ValueError {
 public:
  using ValueError::ValueError;
};

/// Bounds a report row must satisfy. Unset bounds are not checked.
struct ConditionThresholds {
  std::optional<double> min_accuracy;
  std::optional<double> max_accuracy;
  std::optional<double> min_auroc;
  std::optional<double> max_auroc;
  std::optional<double> min_avg_confidence;
  std::optional<double> max_avg_confidence;
  /// accuracy <= factor * (Clean accuracy)
  std::optional<double> max_accuracy_vs_clean;
};

struct DataSection {
  std::string source = "synthetic";  // "synthetic" | "directory"
  std::string directory;             // manifest.csv root when source == "directory"
  std::size_t n_patients = 200;
  std::size_t images_per_patient = 5;
  double test_fraction = 0.12;
  std::uint64_t seed = 1;
};

struct TrainSection {
  TrainConfig config;
  /// Surrogate seed = victim seed + offset.
  std::uint64_t surrogate_seed_offset = 1000;
};

struct AttackSection {
  PgdConfig pgd;
  PatchTrainConfig patch;
  std::uint64_t seed = 11;
  std::size_t threads = 1;
};

struct ReportSection {
  std::string output_dir = "report";
  std::map<std::string, ConditionThresholds> thresholds;
  /// Natural-patch accuracy > black-box patch accuracy > white-box patch accuracy.
  bool check_patch_ordering = true;
};

/// Full run configuration. JSON sections `data`, `train`, `attack`,
/// `report`; every key is optional, unknown keys are rejected.
struct RunConfig {
  DataSection data;
  TrainSection train;
  AttackSection attack;
  ReportSection report;

  static RunConfig defaults();
  static RunConfig parse(std::string_view json_text);
  static RunConfig load(const std::filesystem::path& path);
  /// Resolved configuration (defaults filled in, derived step size shown).
  std::string to_json() const;
  void validate() const;
};

enum class Role { victim, surrogate };

std::string_view to_string(Role role) noexcept;
Role parse_role(std::string_view text);

/// Seed used to train the model for `role`.
std::uint64_t role_seed(const RunConfig& config, Role role);

// Every command writes a run_metadata.json into its output directory that
// echoes the resolved configuration, seeds and input digests.

inline constexpr std::string_view kMetadataFile = "run_metadata.json";

struct GenDataResult {
  std::size_t train_images = 0;
  std::size_t test_images = 0;
  std::array<std::size_t, 2> train_by_label{};
  std::array<std::size_t, 2> test_by_label{};
  std::string summary;
};

/// Writes images/, manifest.csv, train.csv, test.csv under `out`.
GenDataResult cmd_gen_data(const RunConfig& config, const std::filesystem::path& out);

struct TrainResult {
  std::vector<EpochStats> epochs;
  std::vector<double> test_accuracy;  // per epoch
  std::filesystem::path checkpoint;
};

/// Trains on data_dir/train.csv, logging clean accuracy on data_dir/test.csv
/// each epoch. Writes model.amf and train_log.csv under `out`.
TrainResult cmd_train(const RunConfig& config, const std::filesystem::path& data_dir, Role role,
                      const std::filesystem::path& out);

/// Directory names of the conditions `cmd_attack` emits (the clean
/// baseline plus the five attacks).
const std::vector<std::string>& attack_condition_dirs();

/// Attacks data_dir/test.csv under all five conditions and copies the
/// clean baseline. Each condition directory holds the images, a
/// manifest.csv (for `cmd_report`) and a manifest.json (source image,
/// condition, epsilon, seed). Patches go to out/patches/.
void cmd_attack(const RunConfig& config, const std::filesystem::path& data_dir,
                const std::filesystem::path& victim_checkpoint,
                const std::filesystem::path& surrogate_checkpoint, const std::filesystem::path& out);

struct ReportResult {
  EvaluationReport report;
  std::vector<std::string> failures;  // empty when every threshold holds
  std::string table;
  std::string csv;
};

/// Scores the victim on every condition directory present under
/// `attacks_dir` and writes report.csv / report.txt under `out`.
ReportResult cmd_report(const RunConfig& config, const std::filesystem::path& victim_checkpoint,
                        const std::filesystem::path& attacks_dir, const std::filesystem::path& out);

/// Threshold check used by `cmd_report`; one message per violated bound.
std::vector<std::string> check_thresholds(const ReportSection& section, const EvaluationReport& report);

enum class ProvenanceMode { register_images, verify_images };

struct ProvenanceLine {
  std::string file;
  std::string image_id;
  std::string status;  // match | tampered | unknown | registered | error: ...
};

struct ProvenanceResult {
  std::vector<ProvenanceLine> lines;
  std::map<std::string, std::size_t> counts;
  std::string listing;
};

/// Registers or verifies every .pgm/.ppm file directly inside `directory`
/// (image id = file stem). Unreadable files or duplicate registrations are
/// listed as errors and the run continues.
ProvenanceResult cmd_provenance(const std::filesystem::path& registry, const std::filesystem::path& directory,
                                ProvenanceMode mode, const std::string& source = "capture",
                                const std::string& timestamp = {});

}  // namespace advml
