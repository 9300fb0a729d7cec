#include "evx/study_http.hpp"

#include <fstream>
#include <iterator>

#include "evx/explainer.hpp"
#include "httplib.h"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace evx {

int http_status_for(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::UnknownStudy:
    case ErrorCode::UnknownTask:
    case ErrorCode::UnknownAnnotator:
      return 404;
    case ErrorCode::DuplicateVote:
    case ErrorCode::ResolvedTask:
    case ErrorCode::NoResolvedTasks:
      return 409;
    case ErrorCode::InvalidLabel:
    case ErrorCode::MissingOverlay:
    case ErrorCode::EmptyStudy:
    case ErrorCode::EmptySplit:
    case ErrorCode::UnknownClass:
      return 422;
    case ErrorCode::ParamError:
    case ErrorCode::FormatError:
    case ErrorCode::ConfigError:
      return 400;
    default:
      return 500;
  }
}

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, std::string_view code,
                const std::string& message) {
  send_json(res, status, {{"error", code}, {"message", message}});
}

// Runs a handler, turning library errors and malformed JSON into responses.
template <typename Fn>
httplib::Server::Handler guarded(Fn fn) {
  return [fn](const httplib::Request& req, httplib::Response& res) {
    try {
      fn(req, res);
    } catch (const Error& e) {
      send_error(res, http_status_for(e.code()), e.code_name(), e.what());
    } catch (const json::exception& e) {
      send_error(res, 400, "FormatError", e.what());
    }
  };
}

json parse_body(const httplib::Request& req) {
  json body = json::parse(req.body, nullptr, false);
  if (body.is_discarded() || !body.is_object()) {
    fail(ErrorCode::FormatError, "request body must be a JSON object");
  }
  return body;
}

std::string url_path_encode(const std::string& s) {
  static constexpr char kHex[] = "0123456789ABCDEF";
  std::string out;
  for (unsigned char ch : s) {
    if (std::isalnum(ch) || ch == '-' || ch == '.' || ch == '_' || ch == '~' || ch == '/') {
      out += static_cast<char>(ch);
    } else {
      out += '%';
      out += kHex[ch >> 4];
      out += kHex[ch & 15];
    }
  }
  return out;
}

json task_to_json(const StudyTask& task, std::size_t votes) {
  const std::string media = "/media/" + url_path_encode(task.sample_id);
  return {{"sample_id", task.sample_id},
          {"class_name", task.class_name},
          {"image_url", media + "/original"},
          {"overlay_url", media + "/overlay"},
          {"votes", votes},
          {"votes_needed", task.votes_needed}};
}

int parse_label(const json& value) {
  if (!value.is_number_integer()) fail(ErrorCode::InvalidLabel, "label must be the integer 0 or 1");
  const auto label = value.get<long long>();
  if (label != 0 && label != 1) {
    fail(ErrorCode::InvalidLabel, "label must be 0 or 1, got " + std::to_string(label));
  }
  return static_cast<int>(label);
}

}  // namespace

struct StudyHttpServer::Impl {
  StudyService& service;
  httplib::Server server;

  explicit Impl(StudyService& s) : service(s) {}

  void routes() {
    server.Post("/annotators", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const json body = parse_body(req);
      const std::string id = body.at("annotator_id").get<std::string>();
      const bool created = service.register_annotator(id);
      send_json(res, created ? 201 : 200, {{"annotator_id", id}, {"created", created}});
    }));

    server.Post("/studies", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const json body = parse_body(req);
      const ClassificationReport report = load_report(body.at("report").get<std::string>());
      const fs::path overlay_dir = body.at("overlay_dir").get<std::string>();
      const fs::path image_root = body.at("image_root").get<std::string>();
      const std::size_t votes_needed = body.value("votes_needed", kDefaultVotesNeeded);
      const std::string id = service.create_study(
          report, image_root,
          [&](const std::string& sample_id) -> std::optional<fs::path> {
            fs::path p = overlay_file(overlay_dir, sample_id);
            if (fs::is_regular_file(p)) return p;
            return std::nullopt;
          },
          votes_needed);
      send_json(res, 201, {{"study_id", id}});
    }));

    server.Get("/studies", guarded([this](const httplib::Request&, httplib::Response& res) {
      send_json(res, 200, {{"studies", service.study_ids()}});
    }));

    server.Get(R"(/studies/([^/]+)/tasks/next)",
               guarded([this](const httplib::Request& req, httplib::Response& res) {
                 if (!req.has_param("annotator")) {
                   fail(ErrorCode::ParamError, "missing ?annotator= query parameter");
                 }
                 const auto d = service.next_task(req.matches[1], req.get_param_value("annotator"));
                 json body = {{"progress", {{"completed", d.completed}, {"total", d.total}}}};
                 body["task"] = d.task ? task_to_json(*d.task, d.votes) : json(nullptr);
                 send_json(res, 200, body);
               }));

    server.Post(R"(/studies/([^/]+)/votes)",
                guarded([this](const httplib::Request& req, httplib::Response& res) {
                  const json body = parse_body(req);
                  const int label = parse_label(body.at("label"));
                  const VoteOutcome out = service.submit_vote(
                      req.matches[1], body.at("annotator_id").get<std::string>(),
                      body.at("sample_id").get<std::string>(), label);
                  send_json(res, 201,
                            {{"sample_id", body.at("sample_id")},
                             {"votes", out.votes},
                             {"resolved_label",
                              out.resolved_label ? json(*out.resolved_label) : json(nullptr)}});
                }));

    server.Get(R"(/studies/([^/]+)/votes)",
               guarded([this](const httplib::Request& req, httplib::Response& res) {
                 json votes = json::array();
                 for (const auto& v : service.votes(req.matches[1])) votes.push_back(vote_to_json(v));
                 send_json(res, 200, {{"votes", votes}});
               }));

    server.Get(R"(/studies/([^/]+)/report)",
               guarded([this](const httplib::Request& req, httplib::Response& res) {
                 send_json(res, 200, study_report_to_json(service.report(req.matches[1])));
               }));

    server.Get(R"(/media/(.+)/(original|overlay))",
               guarded([this](const httplib::Request& req, httplib::Response& res) {
                 const std::string sample_id = req.matches[1];
                 const auto task = service.find_task(sample_id);
                 if (!task) fail(ErrorCode::UnknownTask, "no task for sample " + sample_id);
                 const fs::path& path = req.matches[2] == "original" ? task->image : task->overlay;
                 std::ifstream in(path, std::ios::binary);
                 if (!in) fail(ErrorCode::IoError, "cannot read " + path.string());
                 std::string data((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
                 res.status = 200;
                 res.set_content(std::move(data),
                                 httplib::detail::find_content_type(path.string(), {},
                                                                    "application/octet-stream"));
               }));
  }
};

StudyHttpServer::StudyHttpServer(StudyService& service, fs::path ui_dir)
    : impl_(std::make_unique<Impl>(service)) {
  impl_->routes();
  if (!ui_dir.empty() && !impl_->server.set_mount_point("/", ui_dir.string())) {
    fail(ErrorCode::IoError, "cannot serve UI from " + ui_dir.string());
  }
}

StudyHttpServer::~StudyHttpServer() = default;

bool StudyHttpServer::listen(const std::string& host, int port) {
  return impl_->server.listen(host, port);
}

int StudyHttpServer::bind_to_any_port(const std::string& host) {
  return impl_->server.bind_to_any_port(host);
}

bool StudyHttpServer::listen_after_bind() { return impl_->server.listen_after_bind(); }

void StudyHttpServer::stop() { impl_->server.stop(); }

void StudyHttpServer::wait_until_ready() const { impl_->server.wait_until_ready(); }

}  // namespace evx
