#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "evx/evaluation.hpp"
#include "json.hpp"

namespace evx {

inline constexpr std::size_t kDefaultVotesNeeded = 3;

struct StudyTask {
  std::string sample_id;
  int class_id = 0;
  std::string class_name;
  std::filesystem::path image;    // original image
  std::filesystem::path overlay;  // Grad-CAM overlay shown beside it
  std::size_t votes_needed = kDefaultVotesNeeded;
  friend bool operator==(const StudyTask&, const StudyTask&) = default;
};

// label 1: the prediction rests on event-related objects or regions.
struct VoteRecord {
  std::string sample_id;
  std::string annotator_id;
  int label = 0;
  std::string timestamp;  // ISO 8601, UTC
  friend bool operator==(const VoteRecord&, const VoteRecord&) = default;
};

nlohmann::json vote_to_json(const VoteRecord& vote);
VoteRecord vote_from_json(const nlohmann::json& doc);

struct ClassAccuracy {
  std::string class_name;
  std::size_t resolved = 0;
  std::size_t positive = 0;         // resolved tasks whose majority label is 1
  std::optional<double> accuracy;   // empty when nothing resolved yet
  friend bool operator==(const ClassAccuracy&, const ClassAccuracy&) = default;
};

struct StudyReport {
  std::vector<ClassAccuracy> per_class;
  double weighted_average = 0.0;  // weighted by resolved tasks per class
  std::size_t resolved_tasks = 0;
  std::size_t unresolved_tasks = 0;
  friend bool operator==(const StudyReport&, const StudyReport&) = default;
};

nlohmann::json study_report_to_json(const StudyReport& report);
std::string render_study_table(const StudyReport& report);

// 1 when strictly more than half of the labels are 1.
int majority_label(std::span<const int> labels);

// One task per correctly predicted sample. `image_root` is joined with the
// sample id to locate the original. Throws MissingOverlay naming every
// correct sample without an overlay, EmptyStudy when nothing is correct.
std::vector<StudyTask> make_study_tasks(const ClassificationReport& report,
                                        const std::filesystem::path& image_root,
                                        const OverlayLookup& overlay_for,
                                        std::size_t votes_needed = kDefaultVotesNeeded);

struct TaskState {
  std::vector<int> labels;
  std::set<std::string> annotators;
  std::optional<int> resolved_label;
};

struct VoteOutcome {
  std::size_t votes = 0;
  std::optional<int> resolved_label;
};

// In-memory study: tasks plus the votes applied so far. Not synchronized.
class Study {
 public:
  Study(std::vector<std::string> class_names, std::vector<StudyTask> tasks);

  const std::vector<std::string>& class_names() const noexcept { return class_names_; }
  const std::vector<StudyTask>& tasks() const noexcept { return tasks_; }
  const TaskState& state(std::size_t task) const { return states_.at(task); }
  std::optional<std::size_t> find(const std::string& sample_id) const;

  // Unresolved task this annotator has not voted on, fewest votes first,
  // ties by sample id.
  std::optional<std::size_t> next_task(const std::string& annotator_id) const;

  // Validates without changing anything. Throws UnknownTask, InvalidLabel,
  // ResolvedTask or DuplicateVote.
  void check_vote(const VoteRecord& vote) const;
  VoteOutcome apply(const VoteRecord& vote);

  // Throws NoResolvedTasks.
  StudyReport report() const;

 private:
  std::vector<std::string> class_names_;
  std::vector<StudyTask> tasks_;  // sorted by sample_id
  std::vector<TaskState> states_;
};

Study replay(std::vector<std::string> class_names, std::vector<StudyTask> tasks,
             std::span<const VoteRecord> votes);

nlohmann::json study_definition_to_json(const Study& study);
Study study_from_definition(const nlohmann::json& doc);

// JSON-lines vote log. A final line cut short by a crash is ignored.
std::vector<VoteRecord> read_vote_log(const std::filesystem::path& path);

// Thread-safe study host persisting to <state_dir>/<study id>/{study.json,
// votes.jsonl} and <state_dir>/annotators.txt. Existing studies are rebuilt
// by replaying their vote logs on construction.
class StudyService {
 public:
  using Clock = std::function<std::string()>;

  explicit StudyService(std::filesystem::path state_dir, Clock clock = {});

  std::string create_study(const ClassificationReport& report,
                           const std::filesystem::path& image_root,
                           const OverlayLookup& overlay_for,
                           std::size_t votes_needed = kDefaultVotesNeeded);
  std::vector<std::string> study_ids() const;

  // Returns true when the id was new. Ids are 1-128 printable characters.
  bool register_annotator(const std::string& annotator_id);
  bool has_annotator(const std::string& annotator_id) const;

  struct Dispatch {
    std::optional<StudyTask> task;  // empty when nothing is left for this annotator
    std::size_t votes = 0;          // votes the task already has
    std::size_t completed = 0;      // tasks this annotator has voted on
    std::size_t total = 0;
  };
  Dispatch next_task(const std::string& study_id, const std::string& annotator_id) const;

  // The uniqueness check and the log append happen under one lock.
  VoteOutcome submit_vote(const std::string& study_id, const std::string& annotator_id,
                          const std::string& sample_id, int label);

  StudyReport report(const std::string& study_id) const;
  std::vector<VoteRecord> votes(const std::string& study_id) const;

  // First task with this sample id in any study.
  std::optional<StudyTask> find_task(const std::string& sample_id) const;

  const std::filesystem::path& state_dir() const noexcept { return state_dir_; }

 private:
  struct Entry {
    Study study;
    std::vector<VoteRecord> votes;
  };
  const Entry& entry(const std::string& study_id) const;
  void require_annotator(const std::string& annotator_id) const;

  std::filesystem::path state_dir_;
  Clock clock_;
  mutable std::mutex mutex_;
  std::map<std::string, Entry> studies_;
  std::set<std::string> annotators_;
  std::size_t next_id_ = 1;
};

std::string utc_timestamp();

}  // namespace evx
