#include "advlab/io.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace advlab {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, std::string_view bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + tmp.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

namespace {

template <class T>
void put_le(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(std::string_view b, std::string what) : b_(b), what_(std::move(what)) {}
  bool done() const { return pos_ == b_.size(); }
  template <class T>
  T le() {
    need(sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }
  std::string_view bytes(std::size_t n) {
    need(n);
    auto s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void skip(std::size_t n) { bytes(n); }

 private:
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) throw IoError(what_ + ": truncated data");
  }
  std::string_view b_;
  std::string what_;
  std::size_t pos_ = 0;
};

}  // namespace

void write_wav(const fs::path& path, std::span<const double> x, unsigned sample_rate) {
  const auto data_bytes = static_cast<std::uint32_t>(x.size() * 2);
  std::string out;
  out.reserve(44 + data_bytes);
  out += "RIFF";
  put_le<std::uint32_t>(out, 36 + data_bytes);
  out += "WAVEfmt ";
  put_le<std::uint32_t>(out, 16);
  put_le<std::uint16_t>(out, 1);
  put_le<std::uint16_t>(out, 1);
  put_le<std::uint32_t>(out, sample_rate);
  put_le<std::uint32_t>(out, sample_rate * 2);
  put_le<std::uint16_t>(out, 2);
  put_le<std::uint16_t>(out, 16);
  out += "data";
  put_le<std::uint32_t>(out, data_bytes);
  for (double v : x) {
    const auto s = static_cast<std::int16_t>(std::lround(std::clamp(v, -1.0, 1.0) * 32767.0));
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(s));
  }
  write_file(path, out);
}

WavData read_wav(const fs::path& path) {
  const std::string bytes = read_file(path);
  Reader r(bytes, "wav '" + path.string() + "'");
  if (r.bytes(4) != "RIFF") throw IoError("wav '" + path.string() + "': missing RIFF header");
  r.skip(4);
  if (r.bytes(4) != "WAVE") throw IoError("wav '" + path.string() + "': not a WAVE file");
  WavData w;
  bool have_fmt = false;
  while (!r.done()) {
    const auto id = r.bytes(4);
    const auto size = r.le<std::uint32_t>();
    if (id == "fmt ") {
      const auto format = r.le<std::uint16_t>();
      const auto channels = r.le<std::uint16_t>();
      w.sample_rate = r.le<std::uint32_t>();
      r.skip(6);
      const auto bits = r.le<std::uint16_t>();
      if (format != 1 || channels != 1 || bits != 16)
        throw IoError("wav '" + path.string() + "': only mono 16-bit PCM is supported");
      r.skip(size - 16);
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw IoError("wav '" + path.string() + "': data before fmt chunk");
      w.samples.resize(size / 2);
      for (auto& s : w.samples) s = static_cast<double>(static_cast<std::int16_t>(r.le<std::uint16_t>())) / 32767.0;
      return w;
    } else {
      r.skip(size + (size & 1));
    }
  }
  throw IoError("wav '" + path.string() + "': no data chunk");
}

std::string encode_checkpoint(const ParameterSet& params) {
  std::string out = "AEMB";
  put_le<std::uint16_t>(out, kCheckpointVersion);
  for (const auto& [name, t] : params.items()) {
    if (name.size() > 0xffff) throw IoError("checkpoint: tensor name too long");
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out += name;
    put_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
    for (auto e : t.shape()) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e));
    for (double v : t.data()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

ParameterSet decode_checkpoint(std::string_view bytes) {
  Reader r(bytes, "checkpoint");
  if (bytes.size() < 4 || r.bytes(4) != "AEMB") throw IoError("checkpoint: bad magic");
  const auto version = r.le<std::uint16_t>();
  if (version != kCheckpointVersion)
    throw IoError("checkpoint: unsupported version " + std::to_string(version));
  ParameterSet p;
  while (!r.done()) {
    const auto len = r.le<std::uint16_t>();
    std::string name(r.bytes(len));
    const auto rank = r.le<std::uint8_t>();
    Shape shape(rank);
    for (auto& e : shape) e = r.le<std::uint32_t>();
    std::vector<double> data(shape_numel(shape));
    for (auto& v : data) v = std::bit_cast<double>(r.le<std::uint64_t>());
    p.add(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  return p;
}

void save_checkpoint(const fs::path& path, const ParameterSet& params) {
  write_file(path, encode_checkpoint(params));
}

ParameterSet load_checkpoint(const fs::path& path) {
  try {
    return decode_checkpoint(read_file(path));
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

std::string git_blob_hash(std::string_view bytes) {
  const std::string header = "blob " + std::to_string(bytes.size()) + '\0';
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int md_len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  const bool ok = ctx && EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
                  EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) == 1 &&
                  EVP_DigestFinal_ex(ctx, md.data(), &md_len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw std::runtime_error("sha1 digest failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string hex;
  for (unsigned i = 0; i < md_len; ++i) {
    hex.push_back(kHex[md[i] >> 4]);
    hex.push_back(kHex[md[i] & 0xf]);
  }
  return hex;
}

std::string file_hash(const fs::path& path) { return git_blob_hash(read_file(path)); }

nlohmann::json adv_sidecar(const AdvExample& ex) {
  return {{"source_id", ex.source_id},       {"source_label", ex.source_label},
          {"target_label", ex.target_label}, {"epsilon", ex.epsilon},
          {"method", method_name(ex.method)}, {"iterations", ex.iterations},
          {"final_loss", ex.final_loss}};
}

void save_adv_set(const fs::path& dir, std::span<const AdvExample> set) {
  ParameterSet tensors;
  nlohmann::json meta = nlohmann::json::array();
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto& ex = set[i];
    const std::string key = std::to_string(i);
    tensors.add(key + ".source", Tensor::vector(ex.source));
    tensors.add(key + ".delta", Tensor::vector(ex.delta));
    tensors.add(key + ".loss", Tensor::vector(ex.loss_history));
    meta.push_back(adv_sidecar(ex));
  }
  save_checkpoint(dir / "adversarial.aemb", tensors);
  write_file(dir / "adversarial.json", meta.dump(2) + "\n");
}

std::vector<AdvExample> load_adv_set(const fs::path& dir) {
  const ParameterSet tensors = load_checkpoint(dir / "adversarial.aemb");
  const auto meta = nlohmann::json::parse(read_file(dir / "adversarial.json"));
  std::vector<AdvExample> out;
  for (std::size_t i = 0; i < meta.size(); ++i) {
    const auto& m = meta[i];
    const std::string key = std::to_string(i);
    AdvExample ex;
    ex.source_id = m.at("source_id").get<std::string>();
    ex.source_label = m.at("source_label").get<std::size_t>();
    ex.target_label = m.at("target_label").get<std::size_t>();
    ex.epsilon = m.at("epsilon").get<double>();
    ex.method = parse_method(m.at("method").get<std::string>());
    ex.iterations = m.at("iterations").get<std::size_t>();
    ex.final_loss = m.at("final_loss").get<double>();
    ex.source = tensors.get(key + ".source").to_vector();
    ex.delta = tensors.get(key + ".delta").to_vector();
    ex.loss_history = tensors.get(key + ".loss").to_vector();
    out.push_back(std::move(ex));
  }
  return out;
}

void export_adv_wavs(const fs::path& dir, std::span<const AdvExample> set, unsigned sample_rate) {
  for (std::size_t i = 0; i < set.size(); ++i) {
    char stem[32];
    std::snprintf(stem, sizeof stem, "adv%04zu", i);
    write_wav(dir / (std::string(stem) + ".wav"), set[i].adversarial(), sample_rate);
    write_file(dir / (std::string(stem) + ".json"), adv_sidecar(set[i]).dump(2) + "\n");
  }
}

std::string corpus_manifest_csv(const Corpus& corpus) {
  std::string out = "utterance_id,speaker_id,split,seed\n";
  for (const auto& e : corpus.entries)
    out += e.utt.id + "," + std::to_string(e.utt.speaker) + "," + split_name(e.split) + "," +
           std::to_string(e.seed) + "\n";
  return out;
}

void write_corpus(const fs::path& dir, const Corpus& corpus) {
  const auto rate = static_cast<unsigned>(corpus.synth.sample_rate);
  for (const auto& e : corpus.entries) write_wav(dir / "wav" / (e.utt.id + ".wav"), e.utt.samples, rate);
  write_file(dir / "manifest.csv", corpus_manifest_csv(corpus));
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string detection_csv(std::span<const DetectionRow> rows) {
  std::string out = "utterance_id,label,score\n";
  for (const auto& r : rows) out += r.utterance_id + "," + r.label + "," + format_double(r.score) + "\n";
  return out;
}

nlohmann::json report_json(const EvalReport& r) {
  return {{"n_adversarial", r.n_adversarial},
          {"attack_success_rate", r.attack_success_rate},
          {"defense_success_rate", r.defense_success_rate},
          {"neither_rate", r.neither_rate},
          {"sim_src", r.sim_src},
          {"sim_tgt", r.sim_tgt},
          {"eer", r.eer}};
}

EvalReport report_from_json(const nlohmann::json& j) {
  EvalReport r;
  r.n_adversarial = j.at("n_adversarial").get<std::size_t>();
  r.attack_success_rate = j.at("attack_success_rate").get<double>();
  r.defense_success_rate = j.at("defense_success_rate").get<double>();
  r.neither_rate = j.at("neither_rate").get<double>();
  r.sim_src = j.at("sim_src").get<double>();
  r.sim_tgt = j.at("sim_tgt").get<double>();
  r.eer = j.at("eer").get<double>();
  return r;
}

std::string format_table(std::span<const TableRow> rows) {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof line, "%-26s %-6s %10s %10s %9s %9s %9s %8s\n", "defense", "attack",
                "attack[%]", "defense[%]", "other[%]", "sim_src", "sim_tgt", "EER[%]");
  out += line;
  for (const auto& row : rows) {
    const auto& r = row.report;
    std::snprintf(line, sizeof line, "%-26s %-6s %10.2f %10.2f %9.2f %9.4f %9.4f %8.3f\n",
                  row.defense.c_str(), row.attack.c_str(), r.attack_success_rate,
                  r.defense_success_rate, r.neither_rate, r.sim_src, r.sim_tgt, r.eer);
    out += line;
  }
  return out;
}

}  // namespace advlab
