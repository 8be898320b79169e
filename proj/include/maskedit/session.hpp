#pragma once

// Editing sessions persisted in SQLite.
//
// A session keeps its original exemplar and mask plus an append-only history
// of entries: "edit" (edited mask, output image), "mask" (replacement mask)
// and "undo".  The current exemplar/mask pair is a fold over that history:
// edits and masks push a state, undo pops one.  After an edit the output
// becomes the exemplar and the edited mask the exemplar mask.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "maskedit/inference.hpp"
#include "maskedit/segmenter.hpp"

struct sqlite3;

namespace maskedit {

using Bytes = std::vector<std::uint8_t>;

struct HistoryEntry {
  std::int64_t seq = 0;
  std::string kind;  // "edit" | "mask" | "undo"
  double timestamp = 0.0;
  Bytes mask_png;
  Bytes image_png;  // edits only
};

struct SessionRecord {
  std::string id;
  double created = 0.0;
  double touched = 0.0;
  Bytes exemplar_png;
  Bytes mask_png;
  std::vector<HistoryEntry> history;
};

class SessionStore {
 public:
  using Clock = std::function<double()>;
  static double wall_clock();

  // ":memory:" keeps everything in process.
  SessionStore(const std::string& path, double ttl_seconds, Clock clock = wall_clock);
  ~SessionStore();
  SessionStore(const SessionStore&) = delete;
  SessionStore& operator=(const SessionStore&) = delete;

  void create(const std::string& id, const Bytes& exemplar_png, const Bytes& mask_png);
  // Expired sessions are evicted and reported as absent.  Touches the session.
  std::optional<SessionRecord> load(const std::string& id);
  // Returns the new entry's sequence number.  NotFoundError if absent.
  std::int64_t append(const std::string& id, const std::string& kind, const Bytes& mask_png, const Bytes& image_png);
  std::vector<std::string> evict_expired();
  std::size_t size();
  double ttl() const { return ttl_; }

 private:
  void exec(const char* sql);
  void remove(const std::string& id);

  sqlite3* db_ = nullptr;
  double ttl_;
  Clock clock_;
  std::mutex mutex_;
};

struct SessionState {
  RGBImage exemplar;
  BinaryMask mask;
  int depth = 0;  // states above the original
};

// Folds a record's history into the current exemplar and mask.
SessionState fold_history(const SessionRecord& record);

struct CreatedSession {
  std::string id;
  BinaryMask mask;
  std::string mask_source;  // "upload" | "segmenter" | "none"
  std::vector<std::string> warnings;
};

struct EditOutcome {
  std::int64_t seq = 0;
  ManipulationResult result;
};

class SessionManager {
 public:
  SessionManager(std::shared_ptr<const ModelHandle> model, SessionStore& store,
                 std::optional<SegmenterEndpoint> segmenter = std::nullopt);

  CreatedSession create(const Bytes& exemplar, const std::optional<Bytes>& mask, const MaskPrompt& prompt = {});
  SessionRecord get(const std::string& id);
  SessionState state(const std::string& id);
  // Uploaded mask when given, otherwise the segmenter with the prompt.
  ExtractedMask set_mask(const std::string& id, const std::optional<Bytes>& mask, const MaskPrompt& prompt);
  EditOutcome manipulate(const std::string& id, const Bytes& mask_png, const ManipulationOptions& options);
  // ConsistencyError when there is nothing to undo.
  SessionState undo(const std::string& id);
  // Re-runs every recorded edit from the original exemplar; returns the
  // final exemplar.
  RGBImage replay(const std::string& id);

  const ModelHandle& model() const { return *model_; }
  const std::optional<SegmenterEndpoint>& segmenter() const { return segmenter_; }
  SessionStore& store() { return store_; }

 private:
  std::shared_ptr<std::mutex> lock_for(const std::string& id);
  SessionRecord require(const std::string& id);

  std::shared_ptr<const ModelHandle> model_;
  SessionStore& store_;
  std::optional<SegmenterEndpoint> segmenter_;
  std::mutex locks_mutex_;
  std::unordered_map<std::string, std::shared_ptr<std::mutex>> locks_;
};

}  // namespace maskedit
