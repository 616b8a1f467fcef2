#pragma once

// Pairwise preference survey: pair scheduling, the append-only vote log, and
// the wins >= 2 label rule.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prefmap/corpus.hpp"

namespace prefmap::survey {

struct Pair {
  std::size_t pair_id = 0;
  std::string left;
  std::string right;
  bool operator==(const Pair&) const = default;
};

struct PairSchedule {
  std::vector<Pair> pairs;
  std::vector<std::string> ids;
  std::size_t min_appearances = 0;
  std::uint64_t seed = 0;

  const Pair* find(std::size_t pair_id) const { return pair_id < pairs.size() ? &pairs[pair_id] : nullptr; }
  std::map<std::string, std::size_t> appearances() const;
};

/// Shuffled round-robin passes pair consecutive ids until every id has
/// `min_appearances`; the remainder is filled with seeded uniform draws.
/// Repeated unordered pairs are avoided while unused pairs remain.
PairSchedule schedule_pairs(std::span<const std::string> ids, std::size_t n_pairs, std::size_t min_appearances,
                            std::uint64_t seed);

enum class Winner { kLeft, kRight, kSkip };
const char* winner_name(Winner w);
/// Throws ValidationError for anything but "left", "right" or "skip".
Winner parse_winner(const std::string& s);

struct VoteRecord {
  std::string ts;
  std::size_t pair_id = 0;
  std::string left;
  std::string right;
  Winner winner = Winner::kSkip;
  std::string rater;
  bool operator==(const VoteRecord&) const = default;
};

class UnknownPairError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class DuplicateVoteError : public ValidationError {
 public:
  DuplicateVoteError(const std::string& msg, VoteRecord earlier) : ValidationError(msg), earlier_(std::move(earlier)) {}
  const VoteRecord& earlier() const { return earlier_; }

 private:
  VoteRecord earlier_;
};

/// Append-only vote log, optionally persisted as votes.jsonl. Appends are
/// serialized and flushed to disk (fsync) before record_vote returns.
class VoteLog {
 public:
  using Clock = std::function<std::string()>;

  /// In-memory log.
  explicit VoteLog(const PairSchedule& schedule, Clock clock = {});
  /// Replays an existing file (if any) and appends to it.
  VoteLog(const PairSchedule& schedule, std::filesystem::path path, Clock clock = {});

  VoteRecord record_vote(std::size_t pair_id, Winner winner, const std::string& rater = "odysseus");

  std::vector<VoteRecord> records() const;
  std::size_t size() const;
  /// Pairs that hold at least one record (a skip answers a pair too).
  std::size_t answered() const;
  /// Lowest pair id without any record, or nullopt when all are answered.
  std::optional<std::size_t> next_unanswered() const;

 private:
  void append_to_file(const VoteRecord& r);

  const PairSchedule& schedule_;
  std::optional<std::filesystem::path> path_;
  Clock clock_;
  mutable std::mutex mutex_;
  std::vector<VoteRecord> records_;
  std::vector<bool> answered_;
};

std::string iso_timestamp_now();

std::string encode_vote(const VoteRecord& r);
VoteRecord decode_vote(const std::string& line);
std::vector<VoteRecord> read_votes(const std::filesystem::path& path);

struct PreferenceLabel {
  std::string image_id;
  std::size_t wins = 0;
  std::size_t appearances = 0;
  bool liked = false;
};

struct LabelRule {
  std::size_t min_wins = 2;
  /// When set, liked <=> wins / appearances >= ratio (sensitivity variant).
  std::optional<double> win_ratio;
};

/// One label per id in `ids`. Per (pair, rater) the effective record is the
/// last non-skip vote, else a skip; skips count as appearances only.
std::vector<PreferenceLabel> derive_labels(std::span<const std::string> ids, const PairSchedule& schedule,
                                           std::span<const VoteRecord> log, const LabelRule& rule = {});

enum class RaterPolicy { kPreferGreen, kAvoidGreen };

/// Deterministic stand-in for a human rater, driven by ground truth.
class SyntheticRater {
 public:
  SyntheticRater(RaterPolicy policy, double noise, std::uint64_t seed);
  /// Seeded per pair id, so the decision is independent of call order.
  Winner decide(std::size_t pair_id, const corpus::GroundTruth& left, const corpus::GroundTruth& right) const;
  /// Same, looking truths up by image id; throws ValidationError when one is missing.
  Winner decide(const Pair& pair, const std::map<std::string, corpus::GroundTruth>& truth) const;

 private:
  RaterPolicy policy_;
  double noise_;
  std::uint64_t seed_;
};

// schedule.json
void write_schedule(const std::filesystem::path& path, const PairSchedule& s, const std::string& fingerprint);
PairSchedule read_schedule(const std::filesystem::path& path);

}  // namespace prefmap::survey
