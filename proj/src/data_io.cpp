// SPDX-License-Identifier: Apache-2.0
#include "archx/data_io.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <bit>
#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

#include "archx/error.hpp"
#include "archx/util.hpp"

namespace archx {

std::string_view to_string(MetricSource s) { return s == MetricSource::ingested ? "ingested" : "surrogate"; }

// ---------------------------------------------------------------------------
// MetricTable

void MetricTable::add(MetricRow row) {
  if (index_.count(row.arch_id)) {
    throw Error(ErrorCode::duplicate_arch, "duplicate arch id " + std::to_string(row.arch_id));
  }
  index_[row.arch_id] = rows_.size();
  rows_.push_back(std::move(row));
}

const MetricRow* MetricTable::find(ArchId id) const {
  const auto it = index_.find(id);
  return it == index_.end() ? nullptr : &rows_[it->second];
}

std::vector<double> MetricTable::accuracy_for(std::span<const ArchId> ids) const {
  std::vector<double> out;
  out.reserve(ids.size());
  for (ArchId id : ids) {
    const auto* r = find(id);
    out.push_back(r ? r->accuracy : std::numeric_limits<double>::quiet_NaN());
  }
  return out;
}

std::vector<std::pair<ArchId, double>> MetricTable::accuracy_pairs() const {
  std::vector<std::pair<ArchId, double>> out;
  out.reserve(rows_.size());
  for (const auto& r : rows_) out.emplace_back(r.arch_id, r.accuracy);
  return out;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

[[noreturn]] void row_error(ErrorCode code, std::size_t line, const std::string& msg) {
  throw Error(code, "line " + std::to_string(line) + ": " + msg);
}

std::vector<std::string> split_csv(std::string_view line, std::size_t line_no) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.emplace_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (quoted) row_error(ErrorCode::parse_error, line_no, "unterminated quote");
  out.emplace_back(trim(cur));
  return out;
}

double number_cell(const std::string& text, std::size_t line, const char* column) {
  double v = 0.0;
  const auto* end = text.data() + text.size();
  const auto [p, ec] = std::from_chars(text.data(), end, v);
  if (text.empty() || ec != std::errc() || p != end || !std::isfinite(v)) {
    row_error(ErrorCode::parse_error, line, std::string("column ") + column + ": '" + text + "' is not a number");
  }
  return v;
}

std::optional<OpId> op_by_alias(const Space& space, std::string_view name) {
  if (auto id = space.op_by_name(name)) return id;
  static const std::pair<std::string_view, std::string_view> aliases[] = {
      {"skip_connect", "identity"},  {"nor_conv_3x3", "conv3x3"}, {"nor_conv_1x1", "conv1x1"},
      {"avg_pool_3x3", "avgpool3x3"}, {"max_pool_3x3", "maxpool3x3"}};
  for (const auto& [from, to] : aliases)
    if (name == from) return space.op_by_name(to);
  return std::nullopt;
}

}  // namespace

std::optional<Architecture> parse_arch_string(const Space& space, std::string_view text) {
  text = trim(text);
  if (text.empty()) return std::nullopt;
  if (std::all_of(text.begin(), text.end(), [](char c) { return c >= '0' && c <= '9'; })) {
    ArchId id = 0;
    const auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), id);
    if (ec != std::errc() || p != text.data() + text.size()) return std::nullopt;
    try {
      Architecture a = space.decode(id);
      if (!space.valid(a) || space.id_of(a) != id) return std::nullopt;
      return a;
    } catch (const std::exception&) {
      return std::nullopt;
    }
  }
  if (space.family() != SpaceFamily::op_slot || text.front() != '|') return std::nullopt;
  Architecture a;
  a.ops.assign(static_cast<std::size_t>(space.positions()), 0);
  std::vector<char> set(a.ops.size(), 0);
  const auto& edges = space.slot_edges();
  int target = 1;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('+', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view group = text.substr(pos, end - pos);
    std::size_t g = 0;
    while (g < group.size()) {
      const std::size_t open = group.find('|', g);
      if (open == std::string_view::npos) break;
      const std::size_t close = group.find('|', open + 1);
      if (close == std::string_view::npos) break;
      const std::string_view item = group.substr(open + 1, close - open - 1);
      g = close;
      if (item.empty()) continue;
      const std::size_t tilde = item.find('~');
      if (tilde == std::string_view::npos) return std::nullopt;
      const auto op = op_by_alias(space, item.substr(0, tilde));
      int from = -1;
      const auto src = item.substr(tilde + 1);
      if (std::from_chars(src.data(), src.data() + src.size(), from).ec != std::errc() || !op) return std::nullopt;
      const auto it = std::find(edges.begin(), edges.end(), std::pair<int, int>{from, target});
      if (it == edges.end()) return std::nullopt;
      const auto slot = static_cast<std::size_t>(it - edges.begin());
      if (set[slot]) return std::nullopt;
      set[slot] = 1;
      a.ops[slot] = *op;
    }
    ++target;
    pos = end + 1;
  }
  if (std::find(set.begin(), set.end(), 0) != set.end()) return std::nullopt;
  return a;
}

MetricTable parse_metrics_csv(std::string_view text, const Space& space) {
  MetricTable table;
  table.source = MetricSource::ingested;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  std::vector<std::string> header;
  int c_id = -1, c_acc = -1, c_params = -1, c_flops = -1, c_time = -1;
  std::vector<int> extra_cols;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = trim(text.substr(pos, end - pos));
    pos = end + 1;
    ++line_no;
    if (line.empty()) {
      if (end == text.size()) break;
      continue;
    }
    auto cells = split_csv(line, line_no);
    if (header.empty()) {
      header = std::move(cells);
      if (!header.empty() && header[0].starts_with("\xEF\xBB\xBF")) header[0].erase(0, 3);
      for (int i = 0; i < static_cast<int>(header.size()); ++i) {
        const auto& h = header[static_cast<std::size_t>(i)];
        int* slot = h == "arch_id" ? &c_id : h == "accuracy" ? &c_acc : h == "params" ? &c_params
                  : h == "flops" ? &c_flops : h == "train_time" ? &c_time : nullptr;
        if (slot) {
          if (*slot >= 0) row_error(ErrorCode::parse_error, line_no, "duplicate column '" + h + "'");
          *slot = i;
        } else {
          extra_cols.push_back(i);
          table.extra_columns.push_back(h);
        }
      }
      for (auto [col, name] : {std::pair{c_id, "arch_id"}, {c_acc, "accuracy"}, {c_params, "params"},
                               {c_flops, "flops"}, {c_time, "train_time"}}) {
        if (col < 0) row_error(ErrorCode::parse_error, line_no, std::string("missing column '") + name + "'");
      }
      continue;
    }
    if (cells.size() != header.size()) {
      row_error(ErrorCode::parse_error, line_no,
                "expected " + std::to_string(header.size()) + " fields, found " + std::to_string(cells.size()));
    }
    auto cell = [&](int c) -> const std::string& { return cells[static_cast<std::size_t>(c)]; };
    const auto arch = parse_arch_string(space, cell(c_id));
    if (!arch) row_error(ErrorCode::unknown_arch, line_no, "unknown architecture '" + cell(c_id) + "'");
    MetricRow row;
    row.arch_id = space.id_of(*arch);
    row.accuracy = number_cell(cell(c_acc), line_no, "accuracy");
    row.params = number_cell(cell(c_params), line_no, "params");
    row.flops = number_cell(cell(c_flops), line_no, "flops");
    row.train_time = number_cell(cell(c_time), line_no, "train_time");
    if (row.accuracy < 0.0 || row.accuracy > 1.0) {
      row_error(ErrorCode::out_of_range, line_no, "accuracy " + cell(c_acc) + " outside [0, 1]");
    }
    if (row.params < 0.0 || row.flops < 0.0 || row.train_time < 0.0) {
      row_error(ErrorCode::out_of_range, line_no, "params, flops and train_time must be non-negative");
    }
    for (int c : extra_cols) row.extras.push_back(cell(c));
    if (table.find(row.arch_id)) {
      row_error(ErrorCode::duplicate_arch, line_no, "duplicate architecture " + std::to_string(row.arch_id));
    }
    table.add(std::move(row));
  }
  if (header.empty()) throw Error(ErrorCode::parse_error, "metrics file has no header");
  return table;
}

MetricTable ingest_metrics(const std::string& path, const Space& space) {
  return parse_metrics_csv(read_file_locked(path), space);
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

std::string metrics_to_csv(const MetricTable& table) {
  std::ostringstream out;
  out.precision(17);
  out << "arch_id,accuracy,params,flops,train_time";
  for (const auto& c : table.extra_columns) out << ',' << csv_field(c);
  out << '\n';
  for (const auto& r : table.rows()) {
    out << r.arch_id << ',' << r.accuracy << ',' << r.params << ',' << r.flops << ',' << r.train_time;
    for (const auto& e : r.extras) out << ',' << csv_field(e);
    out << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Surrogate

double portable_exp(double x) {
  if (std::isnan(x)) return x;
  if (x > 709.0) return std::numeric_limits<double>::infinity();
  if (x < -745.0) return 0.0;
  // x = k ln2 + r with |r| <= ln2 / 2; ln2 split so k * hi is exact.
  constexpr double ln2_hi = 6.93147180369123816490e-01;
  constexpr double ln2_lo = 1.90821492927058770002e-10;
  constexpr double inv_ln2 = 1.44269504088896338700e+00;
  const double k = std::floor(x * inv_ln2 + 0.5);
  const double r = (x - k * ln2_hi) - k * ln2_lo;
  double sum = 1.0;
  for (int n = 22; n >= 1; --n) sum = 1.0 + sum * r / n;
  return std::ldexp(sum, static_cast<int>(k));
}

double portable_logistic(double x) { return 1.0 / (1.0 + portable_exp(-x)); }

double surrogate_logit(const Space& space, const Architecture& a, const SurrogateWeights& w) {
  const auto f = cell_features(space, a);
  double conv = 0, pmax = 0, pavg = 0, ident = 0;
  for (std::size_t o = 0; o < f.op_counts.size(); ++o) {
    const double n = f.op_counts[o];
    switch (space.op(static_cast<OpId>(o)).kind) {
      case OpKind::conv: conv += n; break;
      case OpKind::pool_max: pmax += n; break;
      case OpKind::pool_avg: pavg += n; break;
      case OpKind::identity: ident += n; break;
      default: break;
    }
  }
  double z = w.base;
  z += w.conv * conv;
  z += w.pool_max * pmax;
  z += w.pool_avg * pavg;
  z += w.identity * ident;
  z += w.identity_path * (f.identity_path ? 1.0 : 0.0);
  z += w.conv3x3_stack * f.max_conv3x3_stack;
  z += w.conv3x3_paths * f.conv3x3_paths;
  z += w.conv_free_paths * f.conv_free_paths;
  return z;
}

double surrogate_score(const Space& space, const Architecture& a, const SurrogateModel& model) {
  const double z = surrogate_logit(space, a, model.weights);
  // Irwin-Hall(4) noise, centered and scaled to unit variance.
  const std::uint64_t h = mix64(model.seed ^ mix64(space.id_of(a) ^ 0x5c0e5ULL));
  double u = 0.0;
  for (std::uint64_t i = 0; i < 4; ++i) u += static_cast<double>(mix64(h + i) >> 11) * 0x1.0p-53;
  const double unit = (u - 2.0) * std::sqrt(3.0);
  const double s0 = portable_logistic(model.weights.base);
  const double noise = model.sigma * unit / (s0 * (1.0 - s0));
  return portable_logistic(z + noise);
}

Scorer surrogate_scorer(const Space& space, const SurrogateModel& model) {
  return [&space, model](const Architecture& a) { return surrogate_score(space, a, model); };
}

MetricTable surrogate_table(const Space& space, std::span<const ArchId> ids, const SurrogateModel& model) {
  // Synthetic sizes: 16 channels on a 32 x 32 feature map.
  constexpr double channels = 16.0;
  constexpr double pixels = 32.0 * 32.0;
  MetricTable table;
  table.source = MetricSource::surrogate;
  for (ArchId id : ids) {
    const Architecture a = space.decode(id);
    MetricRow row;
    row.arch_id = id;
    row.accuracy = surrogate_score(space, a, model);
    for (OpId o : a.ops) {
      const auto& op = space.op(o);
      if (op.kind != OpKind::conv) continue;
      const double k = op.name.find("1x1") != std::string::npos   ? 1.0
                       : op.name.find("5x5") != std::string::npos ? 25.0
                                                                   : 9.0;
      row.params += k * channels * channels;
    }
    row.flops = row.params * pixels;
    row.train_time = 1.0 + row.flops * 1e-7;
    table.add(std::move(row));
  }
  return table;
}

// ---------------------------------------------------------------------------
// Files

namespace {

class LockedFd {
 public:
  LockedFd(const std::string& path, bool write) : path_(path) {
    fd_ = write ? ::open(path.c_str(), O_WRONLY | O_CREAT | O_CLOEXEC, 0644) : ::open(path.c_str(), O_RDONLY | O_CLOEXEC);
    if (fd_ < 0) fail("cannot open");
    if (::flock(fd_, write ? LOCK_EX : LOCK_SH) != 0) fail("cannot lock");
  }
  ~LockedFd() {
    if (fd_ >= 0) ::close(fd_);  // releases the lock
  }
  LockedFd(const LockedFd&) = delete;
  LockedFd& operator=(const LockedFd&) = delete;
  int fd() const { return fd_; }
  [[noreturn]] void fail(const char* what) const {
    throw Error(ErrorCode::io_error, std::string(what) + " " + path_ + ": " + std::strerror(errno));
  }

 private:
  std::string path_;
  int fd_ = -1;
};

void put_u16(std::string& out, std::uint16_t v) {
  for (int i = 0; i < 2; ++i) out += static_cast<char>(v >> (8 * i));
}
void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out += static_cast<char>(v >> (8 * i));
}
void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out += static_cast<char>(v >> (8 * i));
}

class Reader {
 public:
  explicit Reader(std::string_view b) : b_(b) {}
  std::uint64_t get(int bytes) {
    if (pos_ + static_cast<std::size_t>(bytes) > b_.size()) throw Error(ErrorCode::corrupt_file, "distance file truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= std::uint64_t{static_cast<unsigned char>(b_[pos_++])} << (8 * i);
    return v;
  }
  std::size_t pos() const { return pos_; }

 private:
  std::string_view b_;
  std::size_t pos_ = 0;
};

constexpr char kMagic[4] = {'A', 'X', 'D', 'M'};
constexpr std::uint16_t kAxdmVersion = 1;

}  // namespace

void write_file_locked(const std::string& path, std::string_view bytes) {
  LockedFd f(path, true);
  if (::ftruncate(f.fd(), 0) != 0) f.fail("cannot truncate");
  std::size_t done = 0;
  while (done < bytes.size()) {
    const ssize_t w = ::write(f.fd(), bytes.data() + done, bytes.size() - done);
    if (w < 0) {
      if (errno == EINTR) continue;
      f.fail("cannot write");
    }
    done += static_cast<std::size_t>(w);
  }
}

std::string read_file_locked(const std::string& path) {
  LockedFd f(path, false);
  std::string out;
  char buf[1 << 16];
  for (;;) {
    const ssize_t r = ::read(f.fd(), buf, sizeof buf);
    if (r < 0) {
      if (errno == EINTR) continue;
      f.fail("cannot read");
    }
    if (r == 0) break;
    out.append(buf, static_cast<std::size_t>(r));
  }
  return out;
}

std::string encode_distances(const DistanceMatrix& dm, const CacheKey& key) {
  const std::size_t n = dm.size();
  if (n > std::numeric_limits<std::uint32_t>::max()) throw Error(ErrorCode::out_of_range, "matrix too large");
  std::string out(kMagic, 4);
  put_u16(out, kAxdmVersion);
  out += static_cast<char>(dm.backend());
  out += '\0';
  put_u32(out, static_cast<std::uint32_t>(n));
  put_u32(out, kAxdmScale);
  put_u64(out, key.space_hash);
  put_u64(out, key.cost_hash);
  put_u64(out, key.sample_hash);
  for (ArchId id : dm.ids()) put_u64(out, id);
  constexpr double limit = 4294967295.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double q = std::nearbyint(dm(i, j) * kAxdmScale);
      if (!(q >= 0.0 && q <= limit)) {
        throw Error(ErrorCode::out_of_range, "distance " + std::to_string(dm(i, j)) + " does not fit the cache format");
      }
      put_u32(out, static_cast<std::uint32_t>(q));
    }
  Fnv1a h;
  h.update(out);
  put_u64(out, h.digest());
  return out;
}

StoredDistances decode_distances(std::string_view bytes, const CacheKey* expected) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw Error(ErrorCode::corrupt_file, "not a distance cache file");
  }
  if (bytes.size() < 8 + 4 + 4 + 24 + 8) throw Error(ErrorCode::corrupt_file, "distance file truncated");
  Fnv1a h;
  h.update(bytes.substr(0, bytes.size() - 8));
  Reader tail(bytes.substr(bytes.size() - 8));
  if (tail.get(8) != h.digest()) throw Error(ErrorCode::corrupt_file, "distance file checksum mismatch");
  Reader r(bytes.substr(4, bytes.size() - 12));
  if (r.get(2) != kAxdmVersion) throw Error(ErrorCode::corrupt_file, "unsupported distance file version");
  const auto backend = r.get(1);
  r.get(1);
  if (backend > static_cast<std::uint64_t>(DistanceBackend::approx_bipartite)) {
    throw Error(ErrorCode::corrupt_file, "unknown distance backend");
  }
  const std::size_t n = r.get(4);
  const auto scale = r.get(4);
  if (scale == 0) throw Error(ErrorCode::corrupt_file, "zero scale");
  StoredDistances out;
  out.key.space_hash = r.get(8);
  out.key.cost_hash = r.get(8);
  out.key.sample_hash = r.get(8);
  const std::size_t expect = 8 * n + 4 * (n * (n - (n > 0 ? 1 : 0)) / 2);
  if (bytes.size() - 12 - r.pos() != expect) throw Error(ErrorCode::corrupt_file, "distance file size mismatch");
  std::vector<ArchId> ids(n);
  for (auto& id : ids) id = r.get(8);
  if (expected) check_cache_key(*expected, out.key, "distance matrix");
  std::vector<double> values(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v = static_cast<double>(r.get(4)) / static_cast<double>(scale);
      values[i * n + j] = v;
      values[j * n + i] = v;
    }
  out.matrix = DistanceMatrix::from_values(n, std::move(values), static_cast<DistanceBackend>(backend), std::move(ids));
  return out;
}

void save_distances(const std::string& path, const DistanceMatrix& dm, const CacheKey& key) {
  write_file_locked(path, encode_distances(dm, key));
}

StoredDistances load_distances(const std::string& path, const CacheKey* expected) {
  return decode_distances(read_file_locked(path), expected);
}

}  // namespace archx
