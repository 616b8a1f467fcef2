#include "prefmap/survey.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <set>

#include <unistd.h>

#include "json.hpp"

namespace prefmap::survey {

using nlohmann::json;

std::map<std::string, std::size_t> PairSchedule::appearances() const {
  std::map<std::string, std::size_t> out;
  for (const auto& id : ids) out[id] = 0;
  for (const auto& p : pairs) {
    ++out[p.left];
    ++out[p.right];
  }
  return out;
}

PairSchedule schedule_pairs(std::span<const std::string> ids, std::size_t n_pairs, std::size_t min_appearances,
                            std::uint64_t seed) {
  const std::size_t n = ids.size();
  if (n < 2) throw ValidationError("schedule_pairs: need at least 2 ids, got " + std::to_string(n));
  if (std::set<std::string>(ids.begin(), ids.end()).size() != n) throw ValidationError("schedule_pairs: duplicate ids");
  if (n_pairs * 2 < n * min_appearances)
    throw ValidationError("schedule_pairs: infeasible: " + std::to_string(n_pairs) + " pairs x 2 = " +
                          std::to_string(n_pairs * 2) + " slots < " + std::to_string(n) + " ids x " +
                          std::to_string(min_appearances) + " appearances = " + std::to_string(n * min_appearances));

  Rng rng(seed);
  const std::size_t total_unordered = n * (n - 1) / 2;
  std::set<std::pair<std::size_t, std::size_t>> used;
  auto key = [](std::size_t a, std::size_t b) { return std::minmax(a, b); };
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::vector<std::size_t> count(n, 0);
  auto emit = [&](std::size_t a, std::size_t b) {
    used.insert(key(a, b));
    ++count[a];
    ++count[b];
    out.emplace_back(a, b);
  };
  auto random_other = [&](std::size_t a) {
    std::size_t b = static_cast<std::size_t>(rng.below(n - 1));
    return b >= a ? b + 1 : b;
  };

  // Round-robin passes, concatenated so odd counts carry over between passes.
  std::vector<std::size_t> stream;
  stream.reserve(n * min_appearances);
  for (std::size_t pass = 0; pass < min_appearances; ++pass) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    rng.shuffle(order);
    stream.insert(stream.end(), order.begin(), order.end());
  }
  for (std::size_t i = 0; i + 1 < stream.size(); i += 2) {
    const std::size_t a = stream[i];
    auto acceptable = [&](std::size_t b) { return b != a && (used.size() >= total_unordered || !used.contains(key(a, b))); };
    if (!acceptable(stream[i + 1])) {
      bool swapped = false;
      for (std::size_t j = i + 2; j < stream.size() && !swapped; ++j)
        if (acceptable(stream[j])) {
          std::swap(stream[i + 1], stream[j]);
          swapped = true;
        }
      for (std::size_t j = i + 2; j < stream.size() && !swapped && stream[i + 1] == a; ++j)
        if (stream[j] != a) {
          std::swap(stream[i + 1], stream[j]);
          swapped = true;
        }
    }
    if (stream[i + 1] == a) stream[i + 1] = random_other(a);
    emit(a, stream[i + 1]);
  }
  if (stream.size() % 2 == 1) emit(stream.back(), random_other(stream.back()));

  // Remaining pairs: ids still below the minimum first, then uniform draws.
  while (out.size() < n_pairs) {
    std::size_t a = n;
    for (std::size_t i = 0; i < n; ++i)
      if (count[i] < min_appearances) {
        a = i;
        break;
      }
    const bool deficit = a != n;
    std::size_t b = 0;
    for (int attempt = 0; attempt < 1000; ++attempt) {
      if (!deficit) a = static_cast<std::size_t>(rng.below(n));
      b = random_other(a);
      if (used.size() >= total_unordered || !used.contains(key(a, b))) break;
    }
    emit(a, b);
  }
  if (out.size() > n_pairs)
    throw ValidationError("schedule_pairs: coverage needs " + std::to_string(out.size()) + " pairs but only " +
                          std::to_string(n_pairs) + " were requested");

  PairSchedule s;
  s.ids.assign(ids.begin(), ids.end());
  s.min_appearances = min_appearances;
  s.seed = seed;
  s.pairs.reserve(out.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto [a, b] = out[i];
    if (rng.bernoulli(0.5)) std::swap(a, b);
    s.pairs.push_back(Pair{i, ids[a], ids[b]});
  }
  return s;
}

const char* winner_name(Winner w) {
  switch (w) {
    case Winner::kLeft:
      return "left";
    case Winner::kRight:
      return "right";
    case Winner::kSkip:
      return "skip";
  }
  return "skip";
}

Winner parse_winner(const std::string& s) {
  if (s == "left") return Winner::kLeft;
  if (s == "right") return Winner::kRight;
  if (s == "skip") return Winner::kSkip;
  throw ValidationError("winner must be one of left, right, skip (got '" + s + "')");
}

std::string iso_timestamp_now() {
  const auto now = std::chrono::system_clock::now();
  const auto t = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  char out[40];
  std::snprintf(out, sizeof out, "%s.%03lldZ", buf, static_cast<long long>(ms));
  return out;
}

std::string encode_vote(const VoteRecord& r) {
  json j = {{"ts", r.ts},       {"pair_id", r.pair_id},          {"left", r.left},
            {"right", r.right}, {"winner", winner_name(r.winner)}, {"rater", r.rater}};
  return j.dump();
}

VoteRecord decode_vote(const std::string& line) {
  const auto j = json::parse(line);
  return VoteRecord{j.at("ts").get<std::string>(),    j.at("pair_id").get<std::size_t>(),
                    j.at("left").get<std::string>(),  j.at("right").get<std::string>(),
                    parse_winner(j.at("winner").get<std::string>()), j.at("rater").get<std::string>()};
}

std::vector<VoteRecord> read_votes(const std::filesystem::path& path) {
  std::vector<VoteRecord> out;
  std::ifstream in(path);
  if (!in) return out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(decode_vote(line));
    } catch (const std::exception& e) {
      // A torn final line (crash mid-append) is dropped; anything else is corruption.
      if (in.peek() == EOF) break;
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

VoteLog::VoteLog(const PairSchedule& schedule, Clock clock)
    : schedule_(schedule), clock_(clock ? std::move(clock) : Clock(iso_timestamp_now)),
      answered_(schedule.pairs.size(), false) {}

VoteLog::VoteLog(const PairSchedule& schedule, std::filesystem::path path, Clock clock) : VoteLog(schedule, std::move(clock)) {
  for (const auto& r : read_votes(path)) {
    if (!schedule_.find(r.pair_id)) throw ValidationError("vote log references unknown pair " + std::to_string(r.pair_id));
    records_.push_back(r);
    answered_[r.pair_id] = true;
  }
  path_ = std::move(path);
}

void VoteLog::append_to_file(const VoteRecord& r) {
  if (!path_) return;
  if (path_->has_parent_path()) std::filesystem::create_directories(path_->parent_path());
  std::FILE* f = std::fopen(path_->c_str(), "a");
  if (!f) throw Error("cannot open vote log " + path_->string());
  const std::string line = encode_vote(r) + "\n";
  const bool ok = std::fwrite(line.data(), 1, line.size(), f) == line.size() && std::fflush(f) == 0 && ::fsync(fileno(f)) == 0;
  std::fclose(f);
  if (!ok) throw Error("failed to persist vote to " + path_->string());
}

VoteRecord VoteLog::record_vote(std::size_t pair_id, Winner winner, const std::string& rater) {
  const Pair* pair = schedule_.find(pair_id);
  if (!pair) throw UnknownPairError("unknown pair_id " + std::to_string(pair_id));
  std::lock_guard lock(mutex_);
  for (const auto& r : records_)
    if (r.pair_id == pair_id && r.rater == rater && r.winner != Winner::kSkip)
      throw DuplicateVoteError("pair " + std::to_string(pair_id) + " already has a vote by " + rater + ": " + encode_vote(r), r);
  VoteRecord rec{clock_(), pair_id, pair->left, pair->right, winner, rater};
  append_to_file(rec);
  records_.push_back(rec);
  answered_[pair_id] = true;
  return rec;
}

std::vector<VoteRecord> VoteLog::records() const {
  std::lock_guard lock(mutex_);
  return records_;
}

std::size_t VoteLog::size() const {
  std::lock_guard lock(mutex_);
  return records_.size();
}

std::size_t VoteLog::answered() const {
  std::lock_guard lock(mutex_);
  return static_cast<std::size_t>(std::count(answered_.begin(), answered_.end(), true));
}

std::optional<std::size_t> VoteLog::next_unanswered() const {
  std::lock_guard lock(mutex_);
  for (std::size_t i = 0; i < answered_.size(); ++i)
    if (!answered_[i]) return i;
  return std::nullopt;
}

std::vector<PreferenceLabel> derive_labels(std::span<const std::string> ids, const PairSchedule& schedule,
                                           std::span<const VoteRecord> log, const LabelRule& rule) {
  std::map<std::pair<std::size_t, std::string>, const VoteRecord*> effective;
  for (const auto& r : log) {
    if (!schedule.find(r.pair_id)) continue;
    auto& slot = effective[{r.pair_id, r.rater}];
    if (!slot || r.winner != Winner::kSkip) slot = &r;
  }
  std::map<std::string, PreferenceLabel> by_id;
  for (const auto& id : ids) by_id[id] = PreferenceLabel{id, 0, 0, false};
  auto bump = [&](const std::string& id, bool won) {
    auto it = by_id.find(id);
    if (it == by_id.end()) return;
    ++it->second.appearances;
    if (won) ++it->second.wins;
  };
  for (const auto& [key, rec] : effective) {
    const Pair& p = *schedule.find(key.first);
    bump(p.left, rec->winner == Winner::kLeft);
    bump(p.right, rec->winner == Winner::kRight);
  }
  std::vector<PreferenceLabel> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    auto l = by_id[id];
    if (rule.win_ratio)
      l.liked = l.appearances > 0 && static_cast<double>(l.wins) / static_cast<double>(l.appearances) >= *rule.win_ratio;
    else
      l.liked = l.wins >= rule.min_wins;
    out.push_back(l);
  }
  return out;
}

SyntheticRater::SyntheticRater(RaterPolicy policy, double noise, std::uint64_t seed)
    : policy_(policy), noise_(noise), seed_(seed) {
  if (!(noise >= 0.0 && noise <= 1.0)) throw ValidationError("rater noise must be in [0, 1]");
}

Winner SyntheticRater::decide(std::size_t pair_id, const corpus::GroundTruth& left,
                              const corpus::GroundTruth& right) const {
  Rng rng(derive_seed(seed_, static_cast<std::uint64_t>(pair_id)));
  const double coin = rng.uniform();
  // Greener wins; among equally green places the less built-up one wins.
  const auto l = std::make_pair(left.green_fraction, -left.built_fraction);
  const auto r = std::make_pair(right.green_fraction, -right.built_fraction);
  if (l == r) return coin < 0.5 ? Winner::kLeft : Winner::kRight;
  bool left_wins = l > r;
  if (policy_ == RaterPolicy::kAvoidGreen) left_wins = !left_wins;
  if (coin < noise_) left_wins = !left_wins;
  return left_wins ? Winner::kLeft : Winner::kRight;
}

Winner SyntheticRater::decide(const Pair& pair, const std::map<std::string, corpus::GroundTruth>& truth) const {
  const auto l = truth.find(pair.left), r = truth.find(pair.right);
  if (l == truth.end() || r == truth.end())
    throw ValidationError("synthetic rater: missing ground truth for pair " + std::to_string(pair.pair_id));
  return decide(pair.pair_id, l->second, r->second);
}

void write_schedule(const std::filesystem::path& path, const PairSchedule& s, const std::string& fingerprint) {
  json pairs = json::array();
  for (const auto& p : s.pairs) pairs.push_back({p.pair_id, p.left, p.right});
  const auto app = s.appearances();
  std::size_t min_seen = SIZE_MAX;
  for (const auto& [_, c] : app) min_seen = std::min(min_seen, c);
  json j = {{"fingerprint", fingerprint},
            {"seed", s.seed},
            {"n_pairs", s.pairs.size()},
            {"min_appearances", s.min_appearances},
            {"ids", s.ids},
            {"pairs", pairs},
            {"constraint",
             {{"min_observed", min_seen},
              {"mean", 2.0 * static_cast<double>(s.pairs.size()) / static_cast<double>(s.ids.size())},
              {"satisfied", min_seen >= s.min_appearances}}}};
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream(path) << j.dump(1) << '\n';
}

PairSchedule read_schedule(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DependencyError("missing schedule " + path.string() + " (produced by stage 'survey-serve' or 'run-all')");
  const auto j = json::parse(in);
  PairSchedule s;
  s.seed = j.at("seed").get<std::uint64_t>();
  s.min_appearances = j.at("min_appearances").get<std::size_t>();
  s.ids = j.at("ids").get<std::vector<std::string>>();
  for (const auto& p : j.at("pairs"))
    s.pairs.push_back(Pair{p.at(0).get<std::size_t>(), p.at(1).get<std::string>(), p.at(2).get<std::string>()});
  return s;
}

}  // namespace prefmap::survey
