#include "clh/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace clh {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint codec assumes a little-endian host");

constexpr char kMagic[8] = {'C', 'L', 'H', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  template <typename T>
  void pod(const T& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    out_.append(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void str(const std::string& s) {
    pod<std::uint64_t>(s.size());
    out_ += s;
  }
  void matrix(const Matrix& m) {
    pod<std::int64_t>(m.rows());
    pod<std::int64_t>(m.cols());
    out_.append(reinterpret_cast<const char*>(m.data()), static_cast<std::size_t>(m.size()) * sizeof(double));
  }
  void params(const ParamMap& p) {
    pod<std::uint64_t>(p.size());
    for (const auto& [name, m] : p) {
      str(name);
      matrix(m);
    }
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view in) : in_(in) {}
  template <typename T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, in_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint64_t>();
    need(n);
    std::string s(in_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  Matrix matrix() {
    const auto rows = pod<std::int64_t>(), cols = pod<std::int64_t>();
    if (rows < 0 || cols < 0) throw RuntimeFailure("checkpoint: negative matrix shape");
    const auto bytes = static_cast<std::size_t>(rows * cols) * sizeof(double);
    need(bytes);
    Matrix m(rows, cols);
    std::memcpy(m.data(), in_.data() + pos_, bytes);
    pos_ += bytes;
    return m;
  }
  ParamMap params() {
    ParamMap p;
    const auto n = pod<std::uint64_t>();
    for (std::uint64_t i = 0; i < n; ++i) {
      auto name = str();
      p.emplace(std::move(name), matrix());
    }
    return p;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw RuntimeFailure("checkpoint truncated");
  }
  std::string_view in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  const auto& cfg = ckpt.model.config();
  w.pod<std::int32_t>(cfg.feature_dim);
  w.pod<std::int32_t>(cfg.hidden);
  w.pod<std::int32_t>(cfg.encoder_layers);
  w.pod<std::int32_t>(cfg.vocab_size);
  w.pod<std::int32_t>(cfg.adapter_dim);
  w.pod<std::uint64_t>(ckpt.model.rng_seed());
  w.params(ckpt.model.params());

  w.pod<double>(ckpt.opt.lr);
  w.pod<double>(ckpt.opt.beta1);
  w.pod<double>(ckpt.opt.beta2);
  w.pod<double>(ckpt.opt.epsilon);
  w.pod<std::int64_t>(ckpt.opt.step);
  w.pod<std::uint64_t>(ckpt.opt.slots.size());
  for (const auto& [name, slot] : ckpt.opt.slots) {
    w.str(name);
    w.pod<std::int64_t>(slot.step);
    w.matrix(slot.m);
    w.matrix(slot.v);
  }

  const auto& s = ckpt.strategy;
  w.params(s.anchor);
  w.params(s.fisher);
  w.params(s.importance);
  w.pod<std::uint64_t>(s.replay_buffer.size());
  for (const auto& r : s.replay_buffer) {
    w.pod<std::uint32_t>(r.batch);
    w.pod<std::uint64_t>(r.index);
  }
  w.pod<std::uint64_t>(s.buffer_growth.size());
  for (auto g : s.buffer_growth) w.pod<std::int64_t>(g);
  w.pod<std::uint64_t>(s.seen_languages.size());
  for (const auto& l : s.seen_languages) w.str(l);

  const std::string payload = w.take();
  std::string out(kMagic, sizeof kMagic);
  out.append(reinterpret_cast<const char*>(&kVersion), sizeof kVersion);
  out += payload;
  const std::uint32_t crc = crc32_of(payload);
  out.append(reinterpret_cast<const char*>(&crc), sizeof crc);
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  constexpr std::size_t header = sizeof kMagic + sizeof(std::uint32_t);
  if (bytes.size() < header + sizeof(std::uint32_t) || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
    throw RuntimeFailure("not a checkpoint file");
  std::uint32_t version = 0, stored = 0;
  std::memcpy(&version, bytes.data() + sizeof kMagic, sizeof version);
  if (version != kVersion) throw RuntimeFailure("unsupported checkpoint version " + std::to_string(version));
  const std::string_view payload(bytes.data() + header, bytes.size() - header - sizeof stored);
  std::memcpy(&stored, bytes.data() + bytes.size() - sizeof stored, sizeof stored);
  if (crc32_of(payload) != stored) throw RuntimeFailure("checkpoint checksum mismatch (corrupted file)");

  Reader r(payload);
  ModelConfig cfg;
  cfg.feature_dim = r.pod<std::int32_t>();
  cfg.hidden = r.pod<std::int32_t>();
  cfg.encoder_layers = r.pod<std::int32_t>();
  cfg.vocab_size = r.pod<std::int32_t>();
  cfg.adapter_dim = r.pod<std::int32_t>();
  const auto seed = r.pod<std::uint64_t>();
  Checkpoint c;
  c.model = make_model(cfg, seed, r.params());

  c.opt.lr = r.pod<double>();
  c.opt.beta1 = r.pod<double>();
  c.opt.beta2 = r.pod<double>();
  c.opt.epsilon = r.pod<double>();
  c.opt.step = r.pod<std::int64_t>();
  const auto nslots = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < nslots; ++i) {
    auto name = r.str();
    AdamSlot slot;
    slot.step = r.pod<std::int64_t>();
    slot.m = r.matrix();
    slot.v = r.matrix();
    c.opt.slots.emplace(std::move(name), std::move(slot));
  }

  c.strategy.anchor = r.params();
  c.strategy.fisher = r.params();
  c.strategy.importance = r.params();
  const auto nbuf = r.pod<std::uint64_t>();
  c.strategy.replay_buffer.reserve(nbuf);
  for (std::uint64_t i = 0; i < nbuf; ++i) {
    SampleRef ref;
    ref.batch = r.pod<std::uint32_t>();
    ref.index = r.pod<std::uint64_t>();
    c.strategy.replay_buffer.push_back(ref);
  }
  const auto ngrowth = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < ngrowth; ++i) c.strategy.buffer_growth.push_back(r.pod<std::int64_t>());
  const auto nlang = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < nlang; ++i) c.strategy.seen_languages.insert(r.str());
  if (!r.done()) throw RuntimeFailure("checkpoint has trailing bytes");
  return c;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeFailure("cannot write '" + tmp.string() + "'");
    out << contents;
    if (!out.flush()) throw RuntimeFailure("write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RuntimeFailure("cannot read '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_file_atomic(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

}  // namespace clh
