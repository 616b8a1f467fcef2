#pragma once

// HTTP facade for the live survey and the rendered atlas. Routing is kept
// apart from the socket layer so it can be exercised without a server.

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <thread>

#include "prefmap/survey.hpp"

namespace httplib {
class Server;
}

namespace prefmap::service {

struct Response {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

struct ServiceOptions {
  std::filesystem::path root;        // pipeline output directory
  std::filesystem::path static_dir;  // optional UI assets
  std::string rater_id = "odysseus";
  survey::LabelRule label_rule;
};

class SurveyService {
 public:
  /// Loads survey/schedule.json and replays survey/votes.jsonl when present.
  explicit SurveyService(ServiceOptions opts);
  ~SurveyService();

  Response handle(const std::string& method, const std::string& path, const std::string& body = {});

  bool has_schedule() const { return schedule_.has_value(); }

  /// Blocks serving on host:port until stop() is called.
  void listen(const std::string& host, int port);
  /// Binds an ephemeral port and serves on a background thread; returns the port.
  int start_background(const std::string& host = "127.0.0.1");
  void stop();

 private:
  Response next_pair() const;
  Response post_vote(const std::string& body);
  Response progress() const;
  Response file(const std::filesystem::path& p, const std::string& what) const;
  void install_routes();

  ServiceOptions opts_;
  std::optional<survey::PairSchedule> schedule_;
  std::unique_ptr<survey::VoteLog> log_;
  std::unique_ptr<httplib::Server> server_;
  std::unique_ptr<std::thread> thread_;
};

}  // namespace prefmap::service
