#include "maskedit/session.hpp"

#include <sqlite3.h>

#include <chrono>
#include <random>

#include "maskedit/errors.hpp"

namespace maskedit {
namespace {

class Statement {
 public:
  Statement(sqlite3* db, const char* sql) : db_(db) {
    if (sqlite3_prepare_v2(db, sql, -1, &stmt_, nullptr) != SQLITE_OK)
      throw Error(std::string("session store: ") + sqlite3_errmsg(db));
  }
  ~Statement() { sqlite3_finalize(stmt_); }
  Statement(const Statement&) = delete;
  Statement& operator=(const Statement&) = delete;

  Statement& bind(int i, const std::string& s) {
    check(sqlite3_bind_text(stmt_, i, s.c_str(), static_cast<int>(s.size()), SQLITE_TRANSIENT));
    return *this;
  }
  Statement& bind(int i, double v) {
    check(sqlite3_bind_double(stmt_, i, v));
    return *this;
  }
  Statement& bind(int i, std::int64_t v) {
    check(sqlite3_bind_int64(stmt_, i, v));
    return *this;
  }
  Statement& bind(int i, const Bytes& b) {
    check(sqlite3_bind_blob(stmt_, i, b.data(), static_cast<int>(b.size()), SQLITE_TRANSIENT));
    return *this;
  }
  // true while rows remain
  bool step() {
    const int rc = sqlite3_step(stmt_);
    if (rc == SQLITE_ROW) return true;
    if (rc == SQLITE_DONE) return false;
    throw Error(std::string("session store: ") + sqlite3_errmsg(db_));
  }
  std::string text(int c) const {
    const auto* p = sqlite3_column_text(stmt_, c);
    return p ? reinterpret_cast<const char*>(p) : "";
  }
  double real(int c) const { return sqlite3_column_double(stmt_, c); }
  std::int64_t integer(int c) const { return sqlite3_column_int64(stmt_, c); }
  Bytes blob(int c) const {
    const auto* p = static_cast<const std::uint8_t*>(sqlite3_column_blob(stmt_, c));
    return p ? Bytes(p, p + sqlite3_column_bytes(stmt_, c)) : Bytes{};
  }

 private:
  void check(int rc) {
    if (rc != SQLITE_OK) throw Error(std::string("session store: ") + sqlite3_errmsg(db_));
  }
  sqlite3* db_;
  sqlite3_stmt* stmt_ = nullptr;
};

std::string new_session_id() {
  static thread_local std::mt19937_64 gen{std::random_device{}() ^ (static_cast<std::uint64_t>(std::random_device{}()) << 32)};
  static const char* hex = "0123456789abcdef";
  std::string id(32, '0');
  for (int half = 0; half < 2; ++half) {
    std::uint64_t v = gen();
    for (int i = 0; i < 16; ++i, v >>= 4) id[static_cast<std::size_t>(half * 16 + i)] = hex[v & 0xf];
  }
  return id;
}

RGBImage as_rgb(Image img) {
  if (img.channels == 3) return img;
  if (img.channels != 1) throw FormatError("exemplar must be an RGB or greyscale image");
  RGBImage out = Image::zeros(3, img.height, img.width);
  for (int c = 0; c < 3; ++c) std::copy(img.data.begin(), img.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(c * img.plane_size()));
  return out;
}

// Raw grey levels, so that non-binary uploads are detected and thresholded
// with a warning rather than silently.
Image decode_request_mask(const Bytes& bytes) {
  const Image img = decode_image(bytes);
  if (img.channels == 1) return img;
  Image grey = Image::zeros(1, img.height, img.width);
  for (std::size_t p = 0; p < grey.data.size(); ++p) {
    double s = 0.0;
    for (int c = 0; c < img.channels; ++c) s += img.data[c * img.plane_size() + p];
    grey.data[p] = s / img.channels;
  }
  return grey;
}

}  // namespace

double SessionStore::wall_clock() {
  return std::chrono::duration<double>(std::chrono::system_clock::now().time_since_epoch()).count();
}

SessionStore::SessionStore(const std::string& path, double ttl_seconds, Clock clock)
    : ttl_(ttl_seconds), clock_(std::move(clock)) {
  if (ttl_seconds <= 0) throw DimensionError("session TTL must be positive");
  if (sqlite3_open_v2(path.c_str(), &db_, SQLITE_OPEN_READWRITE | SQLITE_OPEN_CREATE | SQLITE_OPEN_FULLMUTEX, nullptr) !=
      SQLITE_OK) {
    const std::string msg = db_ ? sqlite3_errmsg(db_) : "out of memory";
    sqlite3_close(db_);
    throw Error("cannot open session store " + path + ": " + msg);
  }
  exec("PRAGMA foreign_keys = ON");
  exec(
      "CREATE TABLE IF NOT EXISTS sessions (id TEXT PRIMARY KEY, created REAL, touched REAL,"
      " exemplar BLOB, mask BLOB)");
  exec(
      "CREATE TABLE IF NOT EXISTS history (session TEXT REFERENCES sessions(id) ON DELETE CASCADE,"
      " seq INTEGER, kind TEXT, stamp REAL, mask BLOB, image BLOB, PRIMARY KEY (session, seq))");
}

SessionStore::~SessionStore() { sqlite3_close(db_); }

void SessionStore::exec(const char* sql) {
  char* err = nullptr;
  if (sqlite3_exec(db_, sql, nullptr, nullptr, &err) != SQLITE_OK) {
    const std::string msg = err ? err : "unknown error";
    sqlite3_free(err);
    throw Error("session store: " + msg);
  }
}

void SessionStore::remove(const std::string& id) {
  Statement(db_, "DELETE FROM sessions WHERE id = ?").bind(1, id).step();
}

void SessionStore::create(const std::string& id, const Bytes& exemplar_png, const Bytes& mask_png) {
  std::lock_guard lock(mutex_);
  const double now = clock_();
  Statement(db_, "INSERT INTO sessions VALUES (?, ?, ?, ?, ?)")
      .bind(1, id)
      .bind(2, now)
      .bind(3, now)
      .bind(4, exemplar_png)
      .bind(5, mask_png)
      .step();
}

std::optional<SessionRecord> SessionStore::load(const std::string& id) {
  std::lock_guard lock(mutex_);
  const double now = clock_();
  SessionRecord r;
  {
    Statement s(db_, "SELECT id, created, touched, exemplar, mask FROM sessions WHERE id = ?");
    s.bind(1, id);
    if (!s.step()) return std::nullopt;
    r = {s.text(0), s.real(1), s.real(2), s.blob(3), s.blob(4), {}};
  }
  if (now - r.touched > ttl_) {
    remove(id);
    return std::nullopt;
  }
  Statement(db_, "UPDATE sessions SET touched = ? WHERE id = ?").bind(1, now).bind(2, id).step();
  r.touched = now;
  Statement h(db_, "SELECT seq, kind, stamp, mask, image FROM history WHERE session = ? ORDER BY seq");
  h.bind(1, id);
  while (h.step()) r.history.push_back({h.integer(0), h.text(1), h.real(2), h.blob(3), h.blob(4)});
  return r;
}

std::int64_t SessionStore::append(const std::string& id, const std::string& kind, const Bytes& mask_png,
                                  const Bytes& image_png) {
  std::lock_guard lock(mutex_);
  const double now = clock_();
  Statement find(db_, "SELECT touched FROM sessions WHERE id = ?");
  find.bind(1, id);
  if (!find.step() || now - find.real(0) > ttl_) throw NotFoundError("session " + id + " not found");
  Statement next(db_, "SELECT COALESCE(MAX(seq), 0) + 1 FROM history WHERE session = ?");
  next.bind(1, id).step();
  const std::int64_t seq = next.integer(0);
  exec("BEGIN");
  try {
    Statement(db_, "INSERT INTO history VALUES (?, ?, ?, ?, ?, ?)")
        .bind(1, id)
        .bind(2, seq)
        .bind(3, kind)
        .bind(4, now)
        .bind(5, mask_png)
        .bind(6, image_png)
        .step();
    Statement(db_, "UPDATE sessions SET touched = ? WHERE id = ?").bind(1, now).bind(2, id).step();
    exec("COMMIT");
  } catch (...) {
    exec("ROLLBACK");
    throw;
  }
  return seq;
}

std::vector<std::string> SessionStore::evict_expired() {
  std::lock_guard lock(mutex_);
  std::vector<std::string> gone;
  {
    Statement s(db_, "SELECT id FROM sessions WHERE touched < ?");
    s.bind(1, clock_() - ttl_);
    while (s.step()) gone.push_back(s.text(0));
  }
  for (const auto& id : gone) remove(id);
  return gone;
}

std::size_t SessionStore::size() {
  std::lock_guard lock(mutex_);
  Statement s(db_, "SELECT COUNT(*) FROM sessions");
  s.step();
  return static_cast<std::size_t>(s.integer(0));
}

SessionState fold_history(const SessionRecord& record) {
  struct Layer {
    const Bytes* image;
    const Bytes* mask;
  };
  std::vector<Layer> stack{{&record.exemplar_png, &record.mask_png}};
  for (const auto& e : record.history) {
    if (e.kind == "edit")
      stack.push_back({&e.image_png, &e.mask_png});
    else if (e.kind == "mask")
      stack.push_back({stack.back().image, &e.mask_png});
    else if (e.kind == "undo" && stack.size() > 1)
      stack.pop_back();
  }
  const Layer& top = stack.back();
  return {decode_image(*top.image), decode_mask(*top.mask), static_cast<int>(stack.size()) - 1};
}

SessionManager::SessionManager(std::shared_ptr<const ModelHandle> model, SessionStore& store,
                               std::optional<SegmenterEndpoint> segmenter)
    : model_(std::move(model)), store_(store), segmenter_(std::move(segmenter)) {}

std::shared_ptr<std::mutex> SessionManager::lock_for(const std::string& id) {
  std::lock_guard lock(locks_mutex_);
  auto& slot = locks_[id];
  if (!slot) slot = std::make_shared<std::mutex>();
  return slot;
}

SessionRecord SessionManager::require(const std::string& id) {
  auto r = store_.load(id);
  if (!r) throw NotFoundError("session " + id + " not found");
  return std::move(*r);
}

CreatedSession SessionManager::create(const Bytes& exemplar_bytes, const std::optional<Bytes>& mask,
                                      const MaskPrompt& prompt) {
  for (const auto& id : store_.evict_expired()) {
    std::lock_guard lock(locks_mutex_);
    locks_.erase(id);
  }
  const RGBImage exemplar = as_rgb(decode_image(exemplar_bytes));
  CreatedSession out;
  if (mask) {
    out.mask = conform_mask(decode_request_mask(*mask), exemplar.height, exemplar.width, out.warnings, "exemplar mask");
    out.mask_source = "upload";
  } else if (segmenter_) {
    MaskPrompt p = prompt;
    if (p.points.empty() && !p.box) p.points.push_back({exemplar.width / 2.0, exemplar.height / 2.0, 1});
    try {
      auto extracted = extract_mask(exemplar, *segmenter_, p);
      out.mask = std::move(extracted.mask);
      out.warnings = std::move(extracted.warnings);
      out.mask_source = "segmenter";
    } catch (const UnavailableError& e) {
      out.warnings.push_back(e.what());
    }
  }
  if (out.mask.empty()) {
    out.mask = Image::zeros(1, exemplar.height, exemplar.width);
    out.mask_source = "none";
    out.warnings.push_back("no exemplar mask yet; upload one or prompt the segmenter");
  }
  out.id = new_session_id();
  store_.create(out.id, encode_png(exemplar), encode_png(out.mask));
  return out;
}

SessionRecord SessionManager::get(const std::string& id) { return require(id); }

SessionState SessionManager::state(const std::string& id) { return fold_history(require(id)); }

ExtractedMask SessionManager::set_mask(const std::string& id, const std::optional<Bytes>& mask, const MaskPrompt& prompt) {
  auto guard = lock_for(id);
  std::lock_guard lock(*guard);
  const SessionState s = fold_history(require(id));
  ExtractedMask out;
  if (mask) {
    out.mask = conform_mask(decode_request_mask(*mask), s.exemplar.height, s.exemplar.width, out.warnings, "mask");
    if (count_foreground(out.mask) == 0) out.warnings.push_back("mask is empty (no foreground pixels)");
  } else {
    if (!segmenter_)
      throw UnavailableError("no segmenter configured; running in degraded mode, upload the mask as a PNG file instead");
    out = extract_mask(s.exemplar, *segmenter_, prompt);
  }
  store_.append(id, "mask", encode_png(out.mask), {});
  return out;
}

EditOutcome SessionManager::manipulate(const std::string& id, const Bytes& mask_png, const ManipulationOptions& options) {
  auto guard = lock_for(id);
  std::lock_guard lock(*guard);
  const SessionState s = fold_history(require(id));
  std::vector<std::string> warnings;
  const BinaryMask x_A =
      conform_mask(decode_request_mask(mask_png), s.exemplar.height, s.exemplar.width, warnings, "edited mask");
  EditOutcome out;
  out.result = maskedit::manipulate(*model_, s.exemplar, s.mask, x_A, options);
  out.result.warnings.insert(out.result.warnings.begin(), warnings.begin(), warnings.end());
  out.seq = store_.append(id, "edit", encode_png(x_A), encode_png(out.result.image));
  return out;
}

SessionState SessionManager::undo(const std::string& id) {
  auto guard = lock_for(id);
  std::lock_guard lock(*guard);
  if (fold_history(require(id)).depth == 0) throw ConsistencyError("session " + id + " has nothing to undo");
  store_.append(id, "undo", {}, {});
  return fold_history(require(id));
}

RGBImage SessionManager::replay(const std::string& id) {
  auto guard = lock_for(id);
  std::lock_guard lock(*guard);
  const SessionRecord r = require(id);
  struct Layer {
    RGBImage image;
    BinaryMask mask;
  };
  std::vector<Layer> stack{{decode_image(r.exemplar_png), decode_mask(r.mask_png)}};
  for (const auto& e : r.history) {
    if (e.kind == "edit") {
      const BinaryMask x_A = decode_mask(e.mask_png);
      const auto res = maskedit::manipulate(*model_, stack.back().image, stack.back().mask, x_A);
      // Same wire round trip as the live path.
      stack.push_back({decode_image(encode_png(res.image)), x_A});
    } else if (e.kind == "mask") {
      stack.push_back({stack.back().image, decode_mask(e.mask_png)});
    } else if (e.kind == "undo" && stack.size() > 1) {
      stack.pop_back();
    }
  }
  return stack.back().image;
}

}  // namespace maskedit
