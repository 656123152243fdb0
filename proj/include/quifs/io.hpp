#pragma once

#include "quifs/common.hpp"
#include "quifs/mpc.hpp"
#include "quifs/sim.hpp"
#include "quifs/synth.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace quifs {

using Json = nlohmann::json;

inline std::uint64_t fnv1a64(const void* data, size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hexHash(std::uint64_t h) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

// ----- configuration -------------------------------------------------------------------------

inline constexpr int kConfigVersion = 1;

struct ProblemConfig {
  int version = kConfigVersion;
  MpcProblem problem;
  double epsilon = 0.0;
  std::string kernel = "laguerre-m3";
  SynthOptions synth;
  std::uint64_t hash = 0;  // FNV-1a 64 of the canonical JSON text
};

namespace detail {

/// JSON cursor that remembers its path for error messages and rejects unknown keys.
class Node {
 public:
  Node(const Json& j, std::string path) : j_(j), path_(std::move(path)) {}

  const std::string& path() const { return path_; }
  const Json& json() const { return j_; }

  [[noreturn]] void fail(const std::string& what) const { throw InputError("config " + path_ + ": " + what); }

  void object(std::initializer_list<const char*> allowed) const {
    if (!j_.is_object()) fail("expected an object");
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!ok.count(it.key())) throw InputError("config " + child(it.key()) + ": unknown key");
    }
  }
  bool has(const char* key) const { return j_.contains(key) && !j_.at(key).is_null(); }
  Node at(const char* key) const {
    if (!j_.contains(key)) throw InputError("config " + child(key) + ": missing");
    return Node(j_.at(key), child(key));
  }
  Node at(size_t i) const { return Node(j_.at(i), path_ + "[" + std::to_string(i) + "]"); }

  double number() const {
    if (!j_.is_number()) fail("expected a number");
    const double v = j_.get<double>();
    if (!std::isfinite(v)) fail("must be finite");
    return v;
  }
  int integer() const {
    if (!j_.is_number_integer()) fail("expected an integer");
    return j_.get<int>();
  }
  std::uint64_t unsignedInteger() const {
    if (!j_.is_number_unsigned() && !(j_.is_number_integer() && j_.get<long long>() >= 0)) {
      fail("expected a nonnegative integer");
    }
    return j_.get<std::uint64_t>();
  }
  bool boolean() const {
    if (!j_.is_boolean()) fail("expected true or false");
    return j_.get<bool>();
  }
  std::string string() const {
    if (!j_.is_string()) fail("expected a string");
    return j_.get<std::string>();
  }
  Vector vector(int n = -1) const {
    if (j_.is_number() && n == 1) return Vector::Constant(1, number());
    if (!j_.is_array()) fail("expected an array of numbers");
    if (n >= 0 && static_cast<int>(j_.size()) != n) {
      fail("expected " + std::to_string(n) + " entries, got " + std::to_string(j_.size()));
    }
    Vector v(j_.size());
    for (size_t i = 0; i < j_.size(); ++i) v[i] = at(i).number();
    return v;
  }
  /// Array of rows; a bare number is accepted wherever 1 x 1 fits.
  Matrix matrix(int rows, int cols) const {
    if (j_.is_number() && rows <= 1 && cols <= 1) return Matrix::Constant(1, 1, number());
    if (!j_.is_array()) fail("expected an array of rows");
    if (rows >= 0 && static_cast<int>(j_.size()) != rows) {
      fail("expected " + std::to_string(rows) + " rows, got " + std::to_string(j_.size()));
    }
    if (j_.empty()) fail("matrix has no rows");
    const int r = static_cast<int>(j_.size());
    const Node first = at(size_t{0});
    if (!first.j_.is_array()) first.fail("expected a row array");
    const int c = cols >= 0 ? cols : static_cast<int>(first.j_.size());
    Matrix M(r, c);
    for (int i = 0; i < r; ++i) M.row(i) = at(i).vector(c).transpose();
    return M;
  }
  Matrix symmetric(int n) const {
    Matrix M = matrix(n, n);
    if ((M - M.transpose()).lpNorm<Eigen::Infinity>() > 1e-12) fail("matrix is not symmetric");
    return M;
  }

 private:
  std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const Json& j_;
  std::string path_;
};

inline Box readBox(const Node& n, int dim) {
  n.object({"lower", "upper"});
  Box b{n.at("lower").vector(dim), n.at("upper").vector(dim)};
  if ((b.lower.array() > b.upper.array()).any()) n.fail("lower exceeds upper");
  return b;
}

inline Polytope readPolytope(const Node& n, int dim) {
  if (n.has("lower") || n.has("upper")) return Polytope::fromBox(readBox(n, dim));
  n.object({"H", "g"});
  Polytope p;
  p.H = n.at("H").matrix(-1, dim);
  p.g = n.at("g").vector(static_cast<int>(p.H.rows()));
  return p;
}

inline Integrator readIntegrator(const Node& n) {
  const std::string s = n.string();
  if (s == "discrete") return Integrator::Discrete;
  if (s == "euler") return Integrator::ForwardEuler;
  if (s == "rk4") return Integrator::RK4;
  n.fail("integrator must be one of discrete, euler, rk4");
}

}  // namespace detail

/// Parses and validates a configuration document; errors carry the field path.
inline ProblemConfig parseConfig(const Json& root) {
  using detail::Node;
  ProblemConfig cfg;
  const Node top(root, "");
  top.object({"version", "problem", "synthesis", "solver"});
  cfg.version = top.at("version").integer();
  if (cfg.version != kConfigVersion) {
    throw InputError("config version: unsupported version " + std::to_string(cfg.version));
  }

  const Node pr = top.at("problem");
  pr.object({"dynamics", "horizon", "Q", "R", "P", "stateSet", "controlSet", "terminalSet", "disturbance"});
  MpcProblem& p = cfg.problem;
  const Node dyn = pr.at("dynamics");
  const std::string type = dyn.at("type").string();
  if (type == "linear") {
    dyn.object({"type", "A", "B"});
    p.linear = true;
    p.A = dyn.at("A").matrix(-1, -1);
    p.dim = static_cast<int>(p.A.rows());
    if (p.A.cols() != p.dim) dyn.at("A").fail("A must be square");
    p.B = dyn.at("B").matrix(p.dim, -1);
    p.controlDim = static_cast<int>(p.B.cols());
  } else if (type == "nonlinear") {
    dyn.object({"type", "states", "controls", "rhs", "integrator", "sampleTime"});
    p.linear = false;
    p.dim = dyn.at("states").integer();
    p.controlDim = dyn.at("controls").integer();
    if (p.dim < 1 || p.dim > 16) dyn.at("states").fail("must be between 1 and 16");
    if (p.controlDim < 1) dyn.at("controls").fail("must be positive");
    const Node rhs = dyn.at("rhs");
    if (!rhs.json().is_array() || static_cast<int>(rhs.json().size()) != p.dim) {
      rhs.fail("expected one expression per state");
    }
    for (int i = 0; i < p.dim; ++i) {
      const Node e = rhs.at(static_cast<size_t>(i));
      try {
        p.rhs.emplace_back(e.string(), p.dim, p.controlDim);
      } catch (const InputError& err) {
        e.fail(err.what());
      }
    }
    p.integrator = dyn.has("integrator") ? detail::readIntegrator(dyn.at("integrator")) : Integrator::Discrete;
    if (p.integrator != Integrator::Discrete) {
      p.sampleTime = dyn.at("sampleTime").number();
      if (!(p.sampleTime > 0.0)) dyn.at("sampleTime").fail("must be positive");
    }
  } else {
    dyn.at("type").fail("must be linear or nonlinear");
  }
  const int d = p.dim;
  const int m = p.controlDim;
  p.horizon = pr.at("horizon").integer();
  if (p.horizon < 1) pr.at("horizon").fail("must be >= 1");
  p.Q = pr.at("Q").symmetric(d);
  p.R = pr.at("R").symmetric(m);
  p.P = pr.has("P") ? pr.at("P").symmetric(d) : Matrix::Zero(d, d);
  p.stateSet = detail::readPolytope(pr.at("stateSet"), d);
  p.controlSet = detail::readBox(pr.at("controlSet"), m);
  if (pr.has("terminalSet")) {
    const Node ts = pr.at("terminalSet");
    ts.object({"polytope", "ellipsoid"});
    if (ts.has("polytope") == ts.has("ellipsoid")) ts.fail("give exactly one of polytope, ellipsoid");
    if (ts.has("polytope")) {
      p.terminal.kind = TerminalKind::Polytope;
      p.terminal.polytope = detail::readPolytope(ts.at("polytope"), d);
    } else {
      p.terminal.kind = TerminalKind::Ellipsoid;
      p.terminal.P = ts.at("ellipsoid").symmetric(d);
    }
  }
  p.disturbance = pr.has("disturbance") ? detail::readBox(pr.at("disturbance"), d)
                                        : Box{Vector::Zero(d), Vector::Zero(d)};

  const Node sy = top.at("synthesis");
  sy.object({"epsilon", "kernel", "shape", "lipschitz", "radius", "box", "pilotSpacing", "maxSpacing",
             "skipExtension", "calibrationTrials", "maxNonConverged"});
  cfg.epsilon = sy.at("epsilon").number();
  if (!(cfg.epsilon > 0.0)) sy.at("epsilon").fail("must be positive");
  p.epsilon = cfg.epsilon;
  if (sy.has("kernel")) cfg.kernel = sy.at("kernel").string();
  try {
    makeKernel(cfg.kernel, d);
  } catch (const Error& e) {
    sy.at("kernel").fail(e.what());
  }
  SynthOptions& so = cfg.synth;
  if (sy.has("shape")) so.budget.shape = sy.at("shape").number();
  if (sy.has("lipschitz")) so.lipschitz = sy.at("lipschitz").number();
  if (sy.has("radius")) so.budget.radius = sy.at("radius").number();
  if (sy.has("box")) so.box = detail::readBox(sy.at("box"), d);
  if (sy.has("pilotSpacing")) so.pilotSpacing = sy.at("pilotSpacing").number();
  if (sy.has("maxSpacing")) so.budget.maxSpacing = sy.at("maxSpacing").number();
  if (sy.has("skipExtension")) so.skipExtension = sy.at("skipExtension").boolean();
  if (sy.has("calibrationTrials")) so.calibrationTrials = sy.at("calibrationTrials").integer();
  if (sy.has("maxNonConverged")) so.maxNonConvergedFraction = sy.at("maxNonConverged").number();

  if (top.has("solver")) {
    const Node sv = top.at("solver");
    sv.object({"tolerance", "maxIterations", "rho", "randomStarts", "seed", "maxSqpIterations", "feasibilityTol",
               "threads"});
    OracleSettings& os = so.oracle;
    if (sv.has("tolerance")) os.qp.tolerance = sv.at("tolerance").number();
    if (sv.has("maxIterations")) os.qp.maxIterations = sv.at("maxIterations").integer();
    if (sv.has("rho")) os.qp.rho = sv.at("rho").number();
    if (sv.has("randomStarts")) os.randomStarts = sv.at("randomStarts").integer();
    if (sv.has("seed")) os.seed = sv.at("seed").unsignedInteger();
    if (sv.has("maxSqpIterations")) os.maxSqpIterations = sv.at("maxSqpIterations").integer();
    if (sv.has("feasibilityTol")) os.feasibilityTol = sv.at("feasibilityTol").number();
    if (sv.has("threads")) os.threads = sv.at("threads").integer();
  }
  try {
    p.validate();
  } catch (const InputError& e) {
    throw InputError(std::string("config problem: ") + e.what());
  }
  const std::string canonical = root.dump();
  cfg.hash = fnv1a64(canonical.data(), canonical.size());
  so.configHash = cfg.hash;
  return cfg;
}

inline ProblemConfig parseConfigText(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw InputError(std::string("config: ") + e.what());
  }
  return parseConfig(j);
}

inline std::string readFile(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline ProblemConfig loadConfig(const std::string& path) { return parseConfigText(readFile(path)); }

// ----- policy table ----------------------------------------------------------------------------

inline constexpr char kTableMagic[4] = {'Q', 'P', 'T', '1'};
inline constexpr std::uint32_t kTableVersion = 1;
inline constexpr std::uint8_t kFlagsLayoutBytePerPoint = 1;

namespace detail {

class ByteWriter {
 public:
  void raw(const void* p, size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  ByteReader(const std::string& data, size_t end) : d_(data), end_(end) {}

  size_t offset() const { return pos_; }
  [[noreturn]] void fail(const std::string& what) const {
    throw FormatError("policy table at byte " + std::to_string(pos_) + ": " + what);
  }
  void need(size_t n) const {
    if (end_ - pos_ < n) fail("unexpected end of data");
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(d_[pos_++]);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<std::uint8_t>(d_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(static_cast<std::uint8_t>(d_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str(size_t maxLen) {
    const std::uint32_t n = u32();
    if (n > maxLen) fail("string too long");
    need(n);
    std::string s = d_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  const std::string& d_;
  size_t end_;
  size_t pos_ = 0;
};

}  // namespace detail

/// Byte image of a policy table: header, row-major little-endian values, one flag byte per point,
/// then an FNV-1a 64 checksum of everything before it. No timestamps, so equal policies give equal bytes.
inline std::string serializeTable(const ExplicitPolicy& pol) {
  detail::ByteWriter w;
  const LatticeField& f = pol.field;
  const ApproximationBudget& b = pol.budget;
  const int d = f.dim();
  const int mu = f.valueDim();
  w.raw(kTableMagic, 4);
  w.u32(kTableVersion);
  w.u32(static_cast<std::uint32_t>(d));
  w.u32(static_cast<std::uint32_t>(mu));
  for (double v : {f.spacing(), b.shape, b.r0, b.epsilon, b.L0, b.supNorm, b.cGamma, b.saturation, b.decayExponent,
                   b.truncationConstant, b.interpTerm, b.saturationTerm, b.truncationTerm}) {
    w.f64(v);
  }
  w.str(pol.kernelName);
  for (int i = 0; i < d; ++i) w.f64(f.origin()[i]);
  for (int i = 0; i < d; ++i) w.i64(f.box().lo[i]);
  for (int i = 0; i < d; ++i) w.i64(f.box().hi[i]);
  for (int j = 0; j < mu; ++j) w.f64(pol.controlSet.lower[j]);
  for (int j = 0; j < mu; ++j) w.f64(pol.controlSet.upper[j]);
  w.u64(pol.configHash);
  w.u32(pol.extended ? 1u : 0u);
  w.u8(kFlagsLayoutBytePerPoint);
  for (double v : f.values()) w.f64(v);
  for (std::uint8_t fl : f.flags()) w.u8(fl);
  const std::uint64_t sum = fnv1a64(w.bytes().data(), w.bytes().size());
  w.u64(sum);
  return w.bytes();
}

inline ExplicitPolicy deserializeTable(const std::string& data) {
  if (data.size() < 12) throw FormatError("policy table at byte 0: file too short");
  if (std::memcmp(data.data(), kTableMagic, 4) != 0) throw FormatError("policy table at byte 0: bad magic");
  const size_t body = data.size() - 8;
  std::uint64_t stored = 0;
  for (int i = 0; i < 8; ++i) stored |= std::uint64_t(static_cast<std::uint8_t>(data[body + i])) << (8 * i);
  if (fnv1a64(data.data(), body) != stored) {
    throw FormatError("policy table at byte " + std::to_string(body) + ": checksum mismatch");
  }

  detail::ByteReader r(data, body);
  for (int i = 0; i < 4; ++i) r.u8();
  const std::uint32_t version = r.u32();
  if (version != kTableVersion) r.fail("unsupported table version " + std::to_string(version));
  const std::uint32_t d = r.u32();
  const std::uint32_t mu = r.u32();
  if (d < 1 || d > 16 || mu < 1 || mu > 64) r.fail("bad dimensions");
  double h = r.f64();
  ApproximationBudget b;
  b.shape = r.f64();
  b.r0 = r.f64();
  b.epsilon = r.f64();
  b.L0 = r.f64();
  b.supNorm = r.f64();
  b.cGamma = r.f64();
  b.saturation = r.f64();
  b.decayExponent = r.f64();
  b.truncationConstant = r.f64();
  b.interpTerm = r.f64();
  b.saturationTerm = r.f64();
  b.truncationTerm = r.f64();
  b.h = h;
  b.dim = static_cast<int>(d);
  const size_t kernelAt = r.offset();
  const std::string kernelName = r.str(64);
  Vector origin(d);
  for (std::uint32_t i = 0; i < d; ++i) origin[i] = r.f64();
  IndexBox box;
  for (std::uint32_t i = 0; i < d; ++i) box.lo.push_back(r.i64());
  for (std::uint32_t i = 0; i < d; ++i) box.hi.push_back(r.i64());
  Box controls{Vector(mu), Vector(mu)};
  for (std::uint32_t j = 0; j < mu; ++j) controls.lower[j] = r.f64();
  for (std::uint32_t j = 0; j < mu; ++j) controls.upper[j] = r.f64();
  const std::uint64_t hash = r.u64();
  const std::uint32_t policyFlags = r.u32();
  if (policyFlags > 1) r.fail("unknown policy flags");
  if (r.u8() != kFlagsLayoutBytePerPoint) r.fail("unknown flag layout");

  if (box.empty()) r.fail("empty lattice box");
  long double count = 1;
  for (std::uint32_t i = 0; i < d; ++i) count *= static_cast<long double>(box.extent(i));
  const long double payload = count * (8.0L * mu + 1.0L);
  if (payload != static_cast<long double>(body - r.offset())) r.fail("payload size does not match the header");

  GeneratingFunction g = [&] {
    try {
      return makeKernel(kernelName, static_cast<int>(d));
    } catch (const Error& e) {
      throw FormatError("policy table at byte " + std::to_string(kernelAt) + ": " + e.what());
    }
  }();
  if (std::abs(g.decayExponent() - b.decayExponent) > 0.0 || std::abs(cGamma(g.momentOrder()) - b.cGamma) > 0.0) {
    r.fail("kernel constants do not match the catalog entry");
  }
  g = g.withTruncationConstant(b.truncationConstant);
  if (const std::string v = b.violation(); !v.empty()) r.fail("stored budget is invalid: " + v);

  LatticeField field(h, origin, box, static_cast<int>(mu));
  const Index n = field.size();
  std::vector<double> values(static_cast<size_t>(n) * mu);
  for (double& v : values) v = r.f64();
  const size_t flagsAt = r.offset();
  for (Index k = 0; k < n; ++k) {
    const std::uint8_t fl = r.u8();
    if (fl > kExtended) throw FormatError("policy table at byte " + std::to_string(flagsAt + k) + ": bad flag");
    if (fl == kAbsent) continue;
    field.setLinear(k, Eigen::Map<const Vector>(values.data() + static_cast<size_t>(k) * mu, mu), fl);
  }
  return ExplicitPolicy{std::move(field), kernelName, g, b, controls, hash, policyFlags == 1};
}

/// Whole-file atomic write: temp file in the same directory, then rename.
inline void writeFileAtomic(const std::string& path, const std::string& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw InputError("write failed for " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw InputError("cannot rename " + tmp + " to " + path + ": " + ec.message());
  }
}

inline void saveTable(const ExplicitPolicy& pol, const std::string& path) { writeFileAtomic(path, serializeTable(pol)); }
inline ExplicitPolicy loadTable(const std::string& path) { return deserializeTable(readFile(path)); }

// ----- exports ----------------------------------------------------------------------------------

inline const char* flagName(std::uint8_t f) {
  return f == kFeasible ? "feasible" : f == kExtended ? "extended" : "absent";
}

/// Stored lattice points: x1..xd, u1..um, flag.
inline void writeTableCsv(const ExplicitPolicy& pol, std::ostream& os) {
  const LatticeField& f = pol.field;
  os << std::setprecision(17);
  for (int i = 0; i < f.dim(); ++i) os << "x" << i + 1 << ",";
  for (int j = 0; j < f.valueDim(); ++j) os << "u" << j + 1 << ",";
  os << "flag\n";
  for (Index k = 0; k < f.size(); ++k) {
    if (f.flagLinear(k) == kAbsent) continue;
    const Vector x = f.point(f.unlinear(k));
    for (int i = 0; i < f.dim(); ++i) os << x[i] << ",";
    for (int j = 0; j < f.valueDim(); ++j) os << f.rawValue(k)[j] << ",";
    os << flagName(f.flagLinear(k)) << "\n";
  }
}

/// t, x..., u..., w..., state_ok; the last row carries the final state only.
inline void writeTrajectoryCsv(const Trajectory& tr, std::ostream& os) {
  if (tr.states.empty()) return;
  const int d = static_cast<int>(tr.states[0].size());
  const int m = tr.controls.empty() ? 0 : static_cast<int>(tr.controls[0].size());
  os << std::setprecision(17) << "t";
  for (int i = 0; i < d; ++i) os << ",x" << i + 1;
  for (int j = 0; j < m; ++j) os << ",u" << j + 1;
  for (int i = 0; i < d; ++i) os << ",w" << i + 1;
  os << ",state_ok\n";
  for (size_t t = 0; t < tr.states.size(); ++t) {
    os << t;
    for (int i = 0; i < d; ++i) os << "," << tr.states[t][i];
    const bool hasStep = t < tr.controls.size();
    for (int j = 0; j < m; ++j) {
      os << ",";
      if (hasStep) os << tr.controls[t][j];
    }
    for (int i = 0; i < d; ++i) {
      os << ",";
      if (hasStep) os << tr.disturbances[t][i];
    }
    os << "," << int(tr.stateOk[t]) << "\n";
  }
}

/// t, x (explicit run)..., u_online..., u_explicit..., gap.
inline void writeCompareCsv(const RhcComparison& c, std::ostream& os) {
  const Trajectory& ex = c.explicitRun;
  const Trajectory& on = c.onlineRun;
  if (ex.states.empty()) return;
  const int d = static_cast<int>(ex.states[0].size());
  const int m = ex.controls.empty() ? 0 : static_cast<int>(ex.controls[0].size());
  os << std::setprecision(17) << "t";
  for (int i = 0; i < d; ++i) os << ",x" << i + 1;
  for (int j = 0; j < m; ++j) os << ",u_online" << j + 1;
  for (int j = 0; j < m; ++j) os << ",u_explicit" << j + 1;
  os << ",gap\n";
  for (size_t t = 0; t < c.gap.size(); ++t) {
    os << t;
    for (int i = 0; i < d; ++i) os << "," << ex.states[t][i];
    for (int j = 0; j < m; ++j) os << "," << on.controls[t][j];
    for (int j = 0; j < m; ++j) os << "," << ex.controls[t][j];
    os << "," << c.gap[t] << "\n";
  }
}

inline Json budgetJson(const ApproximationBudget& b) {
  return Json{{"epsilon", b.epsilon},
              {"D", b.shape},
              {"h", b.h},
              {"r0", b.r0},
              {"L0", b.L0},
              {"supNorm", b.supNorm},
              {"cGamma", b.cGamma},
              {"saturation", b.saturation},
              {"K", b.decayExponent},
              {"B", b.truncationConstant},
              {"interpTerm", b.interpTerm},
              {"saturationTerm", b.saturationTerm},
              {"truncationTerm", b.truncationTerm},
              {"certifiedBound", b.certifiedBound()}};
}

inline Json policyInfoJson(const ExplicitPolicy& pol) {
  const LatticeField& f = pol.field;
  Json box = Json::array();
  for (int i = 0; i < f.dim(); ++i) box.push_back({f.box().lo[i], f.box().hi[i]});
  return Json{{"format", "QPT1"},
              {"dim", f.dim()},
              {"controls", f.valueDim()},
              {"kernel", pol.kernelName},
              {"budget", budgetJson(pol.budget)},
              {"indexBox", box},
              {"points", f.size()},
              {"feasible", f.countFlag(kFeasible)},
              {"extended", f.countFlag(kExtended)},
              {"extensionApplied", pol.extended},
              {"configHash", hexHash(pol.configHash)}};
}

inline Json stabilityJson(const StabilityReport& r) {
  return Json{{"recursivelyFeasible", r.recursivelyFeasible},
              {"terminalNeighborhoodRadius", r.terminalNeighborhoodRadius},
              {"constraintViolations", r.constraintViolations},
              {"supTrackingError", r.supTrackingError},
              {"supStateDeviation", r.supStateDeviation},
              {"matchedStateGap", r.matchedStateGap},
              {"valueDescentOffset", r.valueDescentOffset},
              {"flaggedSteps", r.flaggedSteps},
              {"steps", r.steps}};
}

inline Json certificationJson(const CertificationReport& r) {
  Json j{{"epsilon", r.epsilon}, {"gridPoints", r.gridPoints}, {"inDomain", r.inDomain}, {"checked", r.checked},
         {"skipped", r.skipped},  {"maxError", r.maxError},     {"passed", r.passed()}};
  if (r.worstPoint.size() > 0) j["worstPoint"] = std::vector<double>(r.worstPoint.data(), r.worstPoint.data() + r.worstPoint.size());
  return j;
}

/// One JSON object per line: {"stage": ..., "values": {...}, "note": ...}.
inline void writeLogJsonl(const SynthesisLog& log, std::ostream& os) {
  for (const SynthesisEvent& e : log.events) {
    Json j{{"stage", e.stage}};
    Json values = Json::object();
    for (const auto& [k, v] : e.values) values[k] = v;
    j["values"] = values;
    if (!e.note.empty()) j["note"] = e.note;
    os << j.dump() << "\n";
  }
}

}  // namespace quifs
