// SPDX-License-Identifier: Apache-2.0
#include "vcd/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "vcd/error.hpp"

namespace vcd {

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'V', 'C', 'D', 'C', 'K', 'P', 'T', '\0'};
constexpr char kMelMagic[8] = {'V', 'C', 'D', 'M', 'E', 'L', '0', '1'};

std::uint64_t fnv(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <class T>
void put(std::string& out, T v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof v);
}
void put_str(std::string& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

class Reader {
 public:
  Reader(const std::string& data, std::size_t end, std::string where) : data_(data), end_(end), where_(std::move(where)) {}
  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof v);
    pos_ += sizeof v;
    return v;
  }
  std::string get_str() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void read_doubles(double* dst, std::size_t n) {
    need(n * sizeof(double));
    std::memcpy(dst, data_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > end_) throw DataError(where_ + ": truncated file");
  }
  const std::string& data_;
  std::size_t end_;
  std::size_t pos_ = 0;
  std::string where_;
};

std::string slurp(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_atomic(const std::filesystem::path& path, const std::string& bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot write " + tmp.string());
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw DataError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace

void write_text_file(const std::filesystem::path& path, const std::string& text) { write_atomic(path, text); }

void Checkpoint::save(const std::filesystem::path& path) const {
  std::string out(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(meta.entries().size()));
  for (const auto& [k, v] : meta.entries()) {
    put_str(out, k);
    put_str(out, v);
  }
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    put_str(out, name);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (int d : t.shape()) put<std::int32_t>(out, d);
    out.append(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(double));
  }
  put<std::uint64_t>(out, fnv(out));
  write_atomic(path, out);
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  const std::string data = slurp(path);
  const std::string where = path.string();
  if (data.size() < sizeof kMagic + 12 || std::memcmp(data.data(), kMagic, sizeof kMagic) != 0) {
    throw DataError(where + ": not a checkpoint container");
  }
  const std::size_t body = data.size() - sizeof(std::uint64_t);
  std::uint64_t stored;
  std::memcpy(&stored, data.data() + body, sizeof stored);
  if (stored != fnv(data.substr(0, body))) throw DataError(where + ": checksum mismatch");
  Reader r(data, body, where);
  for (std::size_t i = 0; i < sizeof kMagic; ++i) r.get<char>();
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw DataError(where + ": container version " + std::to_string(version) + " is not supported (expected " +
                    std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint ck;
  const auto n_meta = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    std::string k = r.get_str();
    ck.meta.set(k, r.get_str());
  }
  const auto n_tensors = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    std::string name = r.get_str();
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) throw DataError(where + ": implausible tensor rank for " + name);
    Shape shape(rank);
    for (auto& d : shape) {
      d = r.get<std::int32_t>();
      if (d < 0) throw DataError(where + ": negative dimension in " + name);
    }
    Tensor t(shape);
    r.read_doubles(t.data(), t.size());
    ck.tensors.emplace(std::move(name), std::move(t));
  }
  if (r.pos() != body) throw DataError(where + ": trailing bytes before checksum");
  return ck;
}

void Checkpoint::put_params(const std::string& prefix, const nn::ParamSet& params) {
  for (const auto& [name, v] : params.items()) tensors[prefix + name] = v.value();
}

void Checkpoint::get_params(const std::string& prefix, nn::ParamSet& params) const { params.load_state(tensors, prefix); }

void Checkpoint::put_schedule(const NoiseSchedule& sched) {
  tensors["schedule.beta"] = Tensor({sched.T + 1}, sched.beta);
  meta.set("schedule.T", sched.T);
  meta.set("schedule.offset", sched.offset);
}

NoiseSchedule Checkpoint::schedule() const {
  const Tensor& beta = tensor("schedule.beta");
  NoiseSchedule s = schedule_from_betas(beta.storage(), meta.get_double("schedule.offset"));
  if (s.T != meta.get_int("schedule.T")) throw DataError("schedule length does not match its metadata");
  return s;
}

void Checkpoint::put_stats(const NormStats& stats) {
  const int n = static_cast<int>(stats.mean.size());
  tensors["stats.mean"] = Tensor({n}, stats.mean);
  tensors["stats.std"] = Tensor({n}, stats.std);
}

NormStats Checkpoint::stats() const {
  NormStats s;
  s.mean = tensor("stats.mean").storage();
  s.std = tensor("stats.std").storage();
  return s;
}

const Tensor& Checkpoint::tensor(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw DataError("checkpoint has no tensor " + name);
  return it->second;
}

void write_mel_file(const std::filesystem::path& path, const MelSpectrogram& mel) {
  std::string out(kMelMagic, sizeof kMelMagic);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(mel.frames));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(mel.bins));
  for (double v : mel.data) put<float>(out, static_cast<float>(v));
  write_atomic(path, out);
}

MelSpectrogram read_mel_file(const std::filesystem::path& path) {
  const std::string data = slurp(path);
  const std::string where = path.string();
  if (data.size() < 16 || std::memcmp(data.data(), kMelMagic, sizeof kMelMagic) != 0) {
    throw DataError(where + ": not a mel matrix file");
  }
  Reader r(data, data.size(), where);
  for (std::size_t i = 0; i < sizeof kMelMagic; ++i) r.get<char>();
  const auto frames = r.get<std::uint32_t>();
  const auto bins = r.get<std::uint32_t>();
  if (data.size() != 16 + static_cast<std::size_t>(frames) * bins * sizeof(float)) {
    throw DataError(where + ": size does not match its " + std::to_string(frames) + "x" + std::to_string(bins) +
                    " header");
  }
  MelSpectrogram mel(static_cast<int>(frames), static_cast<int>(bins));
  for (double& v : mel.data) v = r.get<float>();
  return mel;
}

}  // namespace vcd
