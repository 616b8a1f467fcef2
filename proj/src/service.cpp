#include "prefmap/service.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "httplib.h"
#include "json.hpp"
#include "prefmap/pipeline.hpp"

namespace prefmap::service {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

Response json_response(int status, const json& j) { return Response{status, "application/json", j.dump()}; }
Response error(int status, const std::string& msg) { return json_response(status, {{"error", msg}}); }

json record_json(const survey::VoteRecord& r) { return json::parse(survey::encode_vote(r)); }

// A path segment or relative id that cannot escape its directory.
bool safe_name(const std::string& s) {
  if (s.empty() || s.front() == '/' || s.find('\\') != std::string::npos) return false;
  std::istringstream parts(s);
  std::string part;
  while (std::getline(parts, part, '/'))
    if (part.empty() || part == "." || part == "..") return false;
  return true;
}

std::string content_type_for(const fs::path& p) {
  const auto ext = p.extension().string();
  if (ext == ".png") return "image/png";
  if (ext == ".html") return "text/html; charset=utf-8";
  if (ext == ".js") return "text/javascript";
  if (ext == ".css") return "text/css";
  if (ext == ".json") return "application/json";
  return "application/octet-stream";
}

}  // namespace

SurveyService::SurveyService(ServiceOptions opts) : opts_(std::move(opts)) {
  const auto sched = opts_.root / pipeline::paths::kSchedule;
  if (fs::exists(sched)) {
    schedule_ = survey::read_schedule(sched);
    log_ = std::make_unique<survey::VoteLog>(*schedule_, opts_.root / pipeline::paths::kVotes);
  }
}

SurveyService::~SurveyService() { stop(); }

Response SurveyService::next_pair() const {
  if (!schedule_) return error(409, "no survey schedule; run the 'survey-serve' stage first");
  const auto next = log_->next_unanswered();
  if (!next) return json_response(200, {{"done", true}});
  const auto& p = schedule_->pairs[*next];
  return json_response(200, {{"pair_id", p.pair_id},
                             {"left", {{"id", p.left}, {"image_url", "/api/images/" + p.left}}},
                             {"right", {{"id", p.right}, {"image_url", "/api/images/" + p.right}}}});
}

Response SurveyService::post_vote(const std::string& body) {
  if (!schedule_) return error(409, "no survey schedule; run the 'survey-serve' stage first");
  json j;
  try {
    j = json::parse(body);
  } catch (const std::exception&) {
    return error(400, "request body is not JSON");
  }
  if (!j.is_object() || !j.contains("pair_id") || !j["pair_id"].is_number_integer() || j["pair_id"].get<long long>() < 0)
    return error(422, "pair_id must be a non-negative integer");
  if (!j.contains("winner") || !j["winner"].is_string()) return error(422, "winner must be left, right or skip");
  survey::Winner w;
  try {
    w = survey::parse_winner(j["winner"].get<std::string>());
  } catch (const ValidationError& e) {
    return error(422, e.what());
  }
  const std::string rater = j.value("rater", opts_.rater_id);
  try {
    return json_response(201, record_json(log_->record_vote(j["pair_id"].get<std::size_t>(), w, rater)));
  } catch (const survey::UnknownPairError& e) {
    return error(404, e.what());
  } catch (const survey::DuplicateVoteError& e) {
    return json_response(409, {{"error", e.what()}, {"earlier", record_json(e.earlier())}});
  }
}

Response SurveyService::progress() const {
  if (!schedule_) return json_response(200, {{"answered", 0}, {"total", 0}, {"liked_so_far", 0}});
  const auto records = log_->records();
  const auto labels = survey::derive_labels(schedule_->ids, *schedule_, records, opts_.label_rule);
  const auto liked = std::count_if(labels.begin(), labels.end(), [](const auto& l) { return l.liked; });
  return json_response(200, {{"answered", log_->answered()}, {"total", schedule_->pairs.size()}, {"liked_so_far", liked}});
}

Response SurveyService::file(const fs::path& p, const std::string& what) const {
  if (!fs::is_regular_file(p)) return error(404, what + " not found");
  const auto bytes = read_file_bytes(p);
  return Response{200, content_type_for(p), std::string(bytes.begin(), bytes.end())};
}

Response SurveyService::handle(const std::string& method, const std::string& path, const std::string& body) {
  try {
    if (method == "GET" && path == "/api/pairs/next") return next_pair();
    if (path == "/api/votes") return method == "POST" ? post_vote(body) : error(405, "use POST");
    if (method == "GET" && path == "/api/progress") return progress();
    if (method == "GET" && path.rfind("/api/maps/", 0) == 0) {
      const auto rest = path.substr(10);
      const auto slash = rest.find('/');
      if (slash == std::string::npos) return error(404, "expected /api/maps/{city}/{mode}");
      const auto city = rest.substr(0, slash), mode = rest.substr(slash + 1);
      if (!safe_name(city) || city.find('/') != std::string::npos || (mode != "generic" && mode != "specific"))
        return error(404, "unknown city or mode");
      return file(opts_.root / pipeline::paths::map_png(city, mode), "map " + city + "/" + mode);
    }
    if (method == "GET" && path.rfind("/api/spectrum/", 0) == 0) {
      const auto mode = path.substr(14);
      if (mode != "generic" && mode != "specific") return error(404, "unknown mode");
      return file(opts_.root / pipeline::paths::spectrum_png(mode), "spectrum " + mode);
    }
    if (method == "GET" && path.rfind("/api/images/", 0) == 0) {
      const auto id = path.substr(12);
      if (!safe_name(id)) return error(404, "unknown image");
      const auto sv = opts_.root / corpus::image_rel_path(corpus::ImageKind::kStreetView, id);
      if (fs::is_regular_file(sv)) return file(sv, "image " + id);
      return file(opts_.root / corpus::image_rel_path(corpus::ImageKind::kSatellite, id), "image " + id);
    }
    if (path.rfind("/api/", 0) == 0) return error(404, "no such endpoint");
    if (method == "GET" && !opts_.static_dir.empty()) {
      const std::string rel = path == "/" ? "index.html" : path.substr(1);
      if (!safe_name(rel)) return error(404, "not found");
      return file(opts_.static_dir / rel, rel);
    }
    return error(404, "not found");
  } catch (const std::exception& e) {
    return error(500, e.what());
  }
}

void SurveyService::install_routes() {
  server_ = std::make_unique<httplib::Server>();
  auto forward = [this](const httplib::Request& req, httplib::Response& res) {
    const auto r = handle(req.method, req.path, req.body);
    res.status = r.status;
    res.set_content(r.body, r.content_type);
  };
  server_->Get(".*", forward);
  server_->Post(".*", forward);
}

void SurveyService::listen(const std::string& host, int port) {
  install_routes();
  if (!server_->listen(host, port)) throw Error("cannot listen on " + host + ":" + std::to_string(port));
}

int SurveyService::start_background(const std::string& host) {
  install_routes();
  const int port = server_->bind_to_any_port(host);
  if (port <= 0) throw Error("cannot bind a port on " + host);
  thread_ = std::make_unique<std::thread>([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return port;
}

void SurveyService::stop() {
  if (server_) server_->stop();
  if (thread_ && thread_->joinable()) thread_->join();
  thread_.reset();
}

}  // namespace prefmap::service
