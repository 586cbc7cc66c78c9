#include "nvl/snapshot.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <string>

#include "nvl/errors.hpp"

namespace nvl {

namespace {

constexpr char kMagic[8] = {'N', 'V', 'L', 'S', 'N', 'A', 'P', '1'};
constexpr std::size_t kHeader = 8 + 4 + 4 + 8;

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u64(s.size());
    buf_.insert(buf_.end(), s.begin(), s.end());
  }
  void vec(const Vec& v, int dim) {
    for (int i = 0; i < dim; ++i) f64(v[i]);
  }
  void config(const MarkedConfiguration& g) {
    u32(static_cast<std::uint32_t>(g.dim));
    u64(g.size());
    for (const auto& x : g.x) vec(x, g.dim);
    for (const auto& v : g.v) vec(v, g.dim);
  }
  std::vector<std::uint8_t>& bytes() { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{b_[pos_ + i]} << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{b_[pos_ + i]} << (8 * i);
    pos_ += 8;
    return v;
  }
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const auto n = u64();
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  Vec vec(int dim) {
    Vec v{};
    for (int i = 0; i < dim; ++i) v[i] = f64();
    return v;
  }
  MarkedConfiguration config() {
    MarkedConfiguration g;
    g.dim = static_cast<int>(u32());
    if (g.dim < 1 || g.dim > kMaxDim) throw Error(ErrorKind::ChecksumMismatch, "corrupt dimension in snapshot");
    const auto n = u64();
    need(n * 2 * g.dim * 8);
    g.x.reserve(n);
    g.v.reserve(n);
    for (std::uint64_t i = 0; i < n; ++i) g.x.push_back(vec(g.dim));
    for (std::uint64_t i = 0; i < n; ++i) g.v.push_back(vec(g.dim));
    return g;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::uint64_t n) const {
    if (n > b_.size() - pos_) throw Error(ErrorKind::ChecksumMismatch, "snapshot payload truncated");
  }
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

std::uint32_t crc(std::span<const std::uint8_t> b) {
  uLong c = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks for large payloads.
  std::size_t off = 0;
  while (off < b.size()) {
    const std::size_t n = std::min<std::size_t>(b.size() - off, 1u << 30);
    c = crc32(c, b.data() + off, static_cast<uInt>(n));
    off += n;
  }
  return static_cast<std::uint32_t>(c);
}

std::vector<std::uint8_t> frame(SnapshotKind kind, std::vector<std::uint8_t> payload) {
  Writer w;
  auto& out = w.bytes();
  out.insert(out.end(), kMagic, kMagic + 8);
  w.u32(kSnapshotVersion);
  w.u32(static_cast<std::uint32_t>(kind));
  w.u64(payload.size());
  out.insert(out.end(), payload.begin(), payload.end());
  w.u32(crc(out));
  return std::move(out);
}

std::span<const std::uint8_t> payload_of(std::span<const std::uint8_t> bytes, SnapshotKind expect) {
  if (snapshot_kind(bytes) != expect) throw Error(ErrorKind::InvalidArgument, "snapshot holds a different kind");
  return bytes.subspan(kHeader, bytes.size() - kHeader - 4);
}

void write_params(Writer& w, const DynamicsParams& p) {
  w.f64(p.kappa);
  w.f64(p.beta);
  w.f64(p.dt);
  w.f64(p.t_end);
  w.u64(p.seed);
  w.f64(p.max_kick);
}

DynamicsParams read_params(Reader& r) {
  DynamicsParams p;
  p.kappa = r.f64();
  p.beta = r.f64();
  p.dt = r.f64();
  p.t_end = r.f64();
  p.seed = r.u64();
  p.max_kick = r.f64();
  return p;
}

}  // namespace

std::vector<std::uint8_t> encode_snapshot(const MarkedConfiguration& g) {
  Writer w;
  w.config(g);
  return frame(SnapshotKind::Configuration, std::move(w.bytes()));
}

std::vector<std::uint8_t> encode_snapshot(const GibbsEnsemble& ens) {
  Writer w;
  const auto& s = ens.spec;
  w.u32(static_cast<std::uint32_t>(s.box.dim()));
  w.f64(s.box.half_side());
  w.i64(s.N);
  w.f64(s.beta);
  w.f64(s.rho_max);
  w.i64(s.policy.truncation_radius_K);
  w.f64(s.policy.target_abs_error);
  w.str(s.pot.name);
  w.u64(s.pot.params.size());
  for (const auto& [k, v] : s.pot.params) {
    w.str(k);
    w.f64(v);
  }
  w.u64(ens.seed);
  w.i64(ens.burn_in_sweeps);
  w.i64(ens.thin_sweeps);
  w.i64(ens.chains);
  w.f64(ens.acceptance_rate);
  w.f64(ens.energy_autocorr_time);
  w.u64(ens.step_sizes.size());
  for (double x : ens.step_sizes) w.f64(x);
  w.u64(ens.energies.size());
  for (double x : ens.energies) w.f64(x);
  w.u64(ens.samples.size());
  for (const auto& g : ens.samples) w.config(g);
  return frame(SnapshotKind::Ensemble, std::move(w.bytes()));
}

std::vector<std::uint8_t> encode_snapshot(const Trajectory& tr) {
  Writer w;
  w.u32(static_cast<std::uint32_t>(tr.box.dim()));
  w.f64(tr.box.half_side());
  write_params(w, tr.params);
  w.f64(tr.max_snap_error);
  w.u64(tr.times.size());
  for (std::size_t i = 0; i < tr.times.size(); ++i) {
    w.f64(tr.times[i]);
    w.config(tr.states[i]);
  }
  return frame(SnapshotKind::Trajectory, std::move(w.bytes()));
}

SnapshotKind snapshot_kind(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeader + 4 || std::memcmp(bytes.data(), kMagic, 8) != 0)
    throw Error(ErrorKind::ChecksumMismatch, "not a snapshot or truncated header");
  Reader r(bytes.subspan(8));
  const auto version = r.u32();
  const auto kind = r.u32();
  const auto size = r.u64();
  if (size != bytes.size() - kHeader - 4) throw Error(ErrorKind::ChecksumMismatch, "snapshot length mismatch");
  Reader tail(bytes.subspan(bytes.size() - 4));
  if (tail.u32() != crc(bytes.subspan(0, bytes.size() - 4)))
    throw Error(ErrorKind::ChecksumMismatch, "snapshot checksum mismatch");
  if (version != kSnapshotVersion)
    throw Error(ErrorKind::VersionUnsupported, "snapshot version " + std::to_string(version) + " unsupported");
  if (kind < 1 || kind > 3) throw Error(ErrorKind::VersionUnsupported, "unknown snapshot kind");
  return static_cast<SnapshotKind>(kind);
}

MarkedConfiguration decode_configuration(std::span<const std::uint8_t> bytes) {
  Reader r(payload_of(bytes, SnapshotKind::Configuration));
  return r.config();
}

GibbsEnsemble decode_ensemble(std::span<const std::uint8_t> bytes) {
  Reader r(payload_of(bytes, SnapshotKind::Ensemble));
  GibbsEnsemble ens;
  auto& s = ens.spec;
  const int dim = static_cast<int>(r.u32());
  const double lam = r.f64();
  s.box = BoxGeometry(dim, lam);
  s.N = static_cast<int>(r.i64());
  s.beta = r.f64();
  s.rho_max = r.f64();
  s.policy.truncation_radius_K = static_cast<int>(r.i64());
  s.policy.target_abs_error = r.f64();
  const std::string name = r.str();
  std::map<std::string, double> params;
  const auto np = r.u64();
  for (std::uint64_t i = 0; i < np; ++i) {
    std::string k = r.str();
    params[k] = r.f64();
  }
  s.pot = make_builtin_potential(name, dim, params);
  ens.seed = r.u64();
  ens.burn_in_sweeps = r.i64();
  ens.thin_sweeps = r.i64();
  ens.chains = static_cast<int>(r.i64());
  ens.acceptance_rate = r.f64();
  ens.energy_autocorr_time = r.f64();
  ens.step_sizes.resize(r.u64());
  for (auto& x : ens.step_sizes) x = r.f64();
  ens.energies.resize(r.u64());
  for (auto& x : ens.energies) x = r.f64();
  const auto n = r.u64();
  for (std::uint64_t i = 0; i < n; ++i) ens.samples.push_back(r.config());
  return ens;
}

Trajectory decode_trajectory(std::span<const std::uint8_t> bytes) {
  Reader r(payload_of(bytes, SnapshotKind::Trajectory));
  Trajectory tr;
  const int dim = static_cast<int>(r.u32());
  const double lam = r.f64();
  tr.box = BoxGeometry(dim, lam);
  tr.params = read_params(r);
  tr.max_snap_error = r.f64();
  const auto n = r.u64();
  for (std::uint64_t i = 0; i < n; ++i) {
    tr.times.push_back(r.f64());
    tr.states.push_back(r.config());
  }
  return tr;
}

void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::ConfigError, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::ConfigError, "short write to " + path.string());
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::ConfigError, "cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

MarkedConfiguration load_configuration(const std::filesystem::path& path) {
  return decode_configuration(read_bytes(path));
}

GibbsEnsemble load_ensemble(const std::filesystem::path& path) { return decode_ensemble(read_bytes(path)); }

Trajectory load_trajectory(const std::filesystem::path& path) { return decode_trajectory(read_bytes(path)); }

}  // namespace nvl
