#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "advlab/attacks.hpp"
#include "advlab/metrics.hpp"
#include "advlab/params.hpp"
#include "advlab/synth.hpp"

namespace advlab {

namespace fs = std::filesystem;

// Thrown for unreadable or malformed files.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string read_file(const fs::path& path);
// Writes through a temporary file and renames, so readers never see a partial file.
void write_file(const fs::path& path, std::string_view bytes);

// Mono 16-bit PCM. Samples are clamped to [-1, 1] and scaled by 32767.
void write_wav(const fs::path& path, std::span<const double> x, unsigned sample_rate);
struct WavData {
  unsigned sample_rate = 0;
  std::vector<double> samples;
};
WavData read_wav(const fs::path& path);

// Checkpoint: "AEMB", u16 version, then per tensor {u16 name length, name,
// u8 rank, u32 extents, f64 payload}, all little-endian. Round trips bit-exactly.
inline constexpr std::uint16_t kCheckpointVersion = 1;
std::string encode_checkpoint(const ParameterSet& params);
ParameterSet decode_checkpoint(std::string_view bytes);
void save_checkpoint(const fs::path& path, const ParameterSet& params);
ParameterSet load_checkpoint(const fs::path& path);

// Hex SHA-1 of "blob <size>\0" + bytes, as git computes object ids.
std::string git_blob_hash(std::string_view bytes);
std::string file_hash(const fs::path& path);

// {source_id, source_label, target_label, epsilon, method, iterations, final_loss}
nlohmann::json adv_sidecar(const AdvExample& ex);

// Adversarial sets keep full precision: sources and perturbations go into a
// checkpoint-format file, metadata into a JSON list next to it.
void save_adv_set(const fs::path& dir, std::span<const AdvExample> set);
std::vector<AdvExample> load_adv_set(const fs::path& dir);
// x + delta as WAV plus sidecar JSON per example.
void export_adv_wavs(const fs::path& dir, std::span<const AdvExample> set, unsigned sample_rate);

// WAV per utterance plus manifest.csv (utterance_id, speaker_id, split, seed).
void write_corpus(const fs::path& dir, const Corpus& corpus);
std::string corpus_manifest_csv(const Corpus& corpus);

struct DetectionRow {
  std::string utterance_id;
  std::string label;
  double score = 0.0;
};
std::string detection_csv(std::span<const DetectionRow> rows);

nlohmann::json report_json(const EvalReport& r);
EvalReport report_from_json(const nlohmann::json& j);

struct TableRow {
  std::string defense;
  std::string attack;
  EvalReport report;
};
// Fixed-width text table, one line per row.
std::string format_table(std::span<const TableRow> rows);

// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

}  // namespace advlab
