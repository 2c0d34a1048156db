#pragma once

// Checkpoint file: ASCII magic, a key=value text header closed by a blank
// line, then little-endian float64 tables in a fixed order.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include "kgvem/error.hpp"
#include "kgvem/model.hpp"
#include "kgvem/variational.hpp"

namespace kgvem {

inline constexpr std::string_view kCheckpointMagic = "KGVEM1\n";
inline constexpr int kCheckpointVersion = 1;

enum class CheckpointErrorKind { Io, Truncated, MagicMismatch, VersionMismatch, BadHeader, SizeMismatch };

class CheckpointError : public Error {
 public:
  CheckpointError(CheckpointErrorKind kind, const std::string& what) : Error(what), kind_(kind) {}
  CheckpointErrorKind kind() const noexcept { return kind_; }

 private:
  CheckpointErrorKind kind_;
};

enum class CheckpointKind { Map, Variational };

struct Checkpoint {
  CheckpointKind kind = CheckpointKind::Map;
  Parameters mean;                     // point estimates, or mu
  std::optional<Parameters> log_std;   // xi, variational kind only
  Hyperparameters lambda;
  std::string vocab;                   // path of the entity vocabulary, may be empty

  static Checkpoint from_map(Parameters params, Hyperparameters lambda, std::string vocab = {}) {
    return {CheckpointKind::Map, std::move(params), std::nullopt, std::move(lambda),
            std::move(vocab)};
  }

  static Checkpoint from_variational(const VariationalParams& q, Hyperparameters lambda,
                                     std::string vocab = {}) {
    return {CheckpointKind::Variational, q.mean, q.log_std, std::move(lambda), std::move(vocab)};
  }

  VariationalParams variational() const {
    if (!log_std) throw Error("checkpoint does not hold a variational distribution");
    return {mean, *log_std};
  }

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

namespace detail {

inline void put_f64(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

inline double get_f64(const char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) {
    bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  }
  return std::bit_cast<double>(bits);
}

inline std::size_t header_size_t(const std::map<std::string, std::string>& h, const std::string& key) {
  auto it = h.find(key);
  if (it == h.end()) throw CheckpointError(CheckpointErrorKind::BadHeader, "checkpoint header lacks " + key);
  try {
    std::size_t pos = 0;
    const unsigned long long v = std::stoull(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument(key);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw CheckpointError(CheckpointErrorKind::BadHeader,
                          "checkpoint header: bad value for " + key + ": " + it->second);
  }
}

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& c) {
  const EmbeddingSpace& s = c.mean.space;
  std::ostringstream hdr;
  hdr << kCheckpointMagic;
  hdr << "format_version=" << kCheckpointVersion << '\n';
  hdr << "kind=" << (c.kind == CheckpointKind::Map ? "map" : "variational") << '\n';
  hdr << "space=" << to_string(s.kind) << '\n';
  hdr << "K=" << s.dim << '\n';
  hdr << "K_prime=" << s.width() << '\n';
  hdr << "p=" << c.lambda.p << '\n';
  hdr << "N_e=" << c.mean.num_entities() << '\n';
  hdr << "N_r=" << c.mean.num_relation_ids() / 2 << '\n';
  hdr << "vocab=" << c.vocab << '\n';
  hdr << '\n';
  std::string out = hdr.str();
  auto put_all = [&](std::span<const double> d) {
    for (double v : d) detail::put_f64(out, v);
  };
  put_all(c.mean.entities.data());
  put_all(c.mean.relations.data());
  if (c.kind == CheckpointKind::Variational) {
    if (!c.log_std) throw Error("variational checkpoint lacks log standard deviations");
    put_all(c.log_std->entities.data());
    put_all(c.log_std->relations.data());
  }
  put_all(c.lambda.entity);
  put_all(c.lambda.relation);
  return out;
}

inline Checkpoint parse_checkpoint(std::string_view bytes) {
  using K = CheckpointErrorKind;
  if (bytes.size() < kCheckpointMagic.size()) {
    if (kCheckpointMagic.substr(0, bytes.size()) == bytes) throw CheckpointError(K::Truncated, "checkpoint truncated inside magic");
    throw CheckpointError(K::MagicMismatch, "not a checkpoint file (bad magic)");
  }
  if (bytes.substr(0, kCheckpointMagic.size()) != kCheckpointMagic) {
    throw CheckpointError(K::MagicMismatch, "not a checkpoint file (bad magic)");
  }
  const std::size_t hdr_begin = kCheckpointMagic.size();
  std::size_t hdr_end;
  if (bytes.size() > hdr_begin && bytes[hdr_begin] == '\n') {
    hdr_end = hdr_begin;
  } else {
    const std::size_t blank = bytes.find("\n\n", hdr_begin);
    if (blank == std::string_view::npos) throw CheckpointError(K::Truncated, "checkpoint header is not terminated");
    hdr_end = blank + 1;
  }
  std::map<std::string, std::string> h;
  std::string_view hdr = bytes.substr(hdr_begin, hdr_end - hdr_begin);
  while (!hdr.empty()) {
    const std::size_t nl = hdr.find('\n');
    std::string_view line = hdr.substr(0, nl);
    hdr.remove_prefix(nl == std::string_view::npos ? hdr.size() : nl + 1);
    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos) throw CheckpointError(K::BadHeader, "checkpoint header line without '='");
    h[std::string(line.substr(0, eq))] = std::string(line.substr(eq + 1));
  }
  if (detail::header_size_t(h, "format_version") != static_cast<std::size_t>(kCheckpointVersion)) {
    throw CheckpointError(K::VersionMismatch, "unsupported checkpoint format_version " + h["format_version"]);
  }
  Checkpoint c;
  const std::string kind = h["kind"];
  if (kind == "map") {
    c.kind = CheckpointKind::Map;
  } else if (kind == "variational") {
    c.kind = CheckpointKind::Variational;
  } else {
    throw CheckpointError(K::BadHeader, "checkpoint kind must be map or variational");
  }
  EmbeddingSpace space;
  try {
    space.kind = parse_space(h["space"]);
  } catch (const Error& e) {
    throw CheckpointError(K::BadHeader, e.what());
  }
  space.dim = detail::header_size_t(h, "K");
  if (detail::header_size_t(h, "K_prime") != space.width()) {
    throw CheckpointError(K::BadHeader, "checkpoint K_prime inconsistent with space and K");
  }
  const std::size_t p = detail::header_size_t(h, "p");
  if (p != 2 && p != 3) throw CheckpointError(K::BadHeader, "checkpoint p must be 2 or 3");
  const std::size_t ne = detail::header_size_t(h, "N_e");
  const std::size_t nr = detail::header_size_t(h, "N_r");
  c.vocab = h["vocab"];

  const std::size_t W = space.width();
  const std::size_t tables = (ne + 2 * nr) * W * (c.kind == CheckpointKind::Variational ? 2 : 1);
  const std::size_t expected = 8 * (tables + ne + 2 * nr);
  std::string_view payload = bytes.substr(hdr_end + 1);
  if (payload.size() != expected) {
    throw CheckpointError(K::SizeMismatch, "checkpoint payload has " + std::to_string(payload.size()) +
                                               " bytes, header implies " + std::to_string(expected));
  }
  const char* cur = payload.data();
  auto take = [&](std::span<double> d) {
    for (double& v : d) {
      v = detail::get_f64(cur);
      cur += 8;
    }
  };
  c.mean = Parameters(space, ne, 2 * nr);
  take(c.mean.entities.data());
  take(c.mean.relations.data());
  if (c.kind == CheckpointKind::Variational) {
    c.log_std = Parameters(space, ne, 2 * nr);
    take(c.log_std->entities.data());
    take(c.log_std->relations.data());
  }
  c.lambda.p = static_cast<int>(p);
  c.lambda.entity.resize(ne);
  c.lambda.relation.resize(2 * nr);
  take(c.lambda.entity);
  take(c.lambda.relation);
  return c;
}

inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(c);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError(CheckpointErrorKind::Io, "cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError(CheckpointErrorKind::Io, "write failed: " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointErrorKind::Io, "cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str());
}

}  // namespace kgvem
