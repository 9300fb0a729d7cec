#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include "evx/error.hpp"
#include "evx/study.hpp"

namespace evx {

int http_status_for(ErrorCode code) noexcept;

// JSON API over a StudyService:
//   POST /annotators                      {annotator_id}
//   POST /studies                         {report, image_root, overlay_dir, votes_needed?}
//   GET  /studies
//   GET  /studies/{id}/tasks/next?annotator=...
//   POST /studies/{id}/votes              {sample_id, annotator_id, label}
//   GET  /studies/{id}/votes
//   GET  /studies/{id}/report
//   GET  /media/{sample_id}/{original|overlay}
// Errors come back as {"error": <code name>, "message": ...}.
// When ui_dir is set its files are served from "/".
class StudyHttpServer {
 public:
  explicit StudyHttpServer(StudyService& service, std::filesystem::path ui_dir = {});
  ~StudyHttpServer();
  StudyHttpServer(const StudyHttpServer&) = delete;
  StudyHttpServer& operator=(const StudyHttpServer&) = delete;

  // Blocks until stop().
  bool listen(const std::string& host, int port);
  // Binds an ephemeral port and returns it; then call listen_after_bind().
  int bind_to_any_port(const std::string& host);
  bool listen_after_bind();
  void stop();
  void wait_until_ready() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace evx
