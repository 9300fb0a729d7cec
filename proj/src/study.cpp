#include "evx/study.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>

#include "evx/error.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace evx {

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t secs = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                      now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&secs, &tm);
  char date[32], millis[8];
  std::strftime(date, sizeof date, "%Y-%m-%dT%H:%M:%S", &tm);
  std::snprintf(millis, sizeof millis, ".%03dZ", static_cast<int>(ms));
  return std::string(date) + millis;
}

json vote_to_json(const VoteRecord& vote) {
  return {{"sample_id", vote.sample_id},
          {"annotator_id", vote.annotator_id},
          {"label", vote.label},
          {"timestamp", vote.timestamp}};
}

VoteRecord vote_from_json(const json& doc) {
  try {
    return {doc.at("sample_id").get<std::string>(), doc.at("annotator_id").get<std::string>(),
            doc.at("label").get<int>(), doc.value("timestamp", std::string())};
  } catch (const json::exception& e) {
    fail(ErrorCode::FormatError, std::string("bad vote record: ") + e.what());
  }
}

json study_report_to_json(const StudyReport& report) {
  json classes = json::array();
  for (const auto& c : report.per_class) {
    classes.push_back({{"class_name", c.class_name},
                       {"resolved", c.resolved},
                       {"positive", c.positive},
                       {"accuracy", c.accuracy ? json(*c.accuracy) : json(nullptr)}});
  }
  return {{"per_class", classes},
          {"weighted_average", report.weighted_average},
          {"resolved_tasks", report.resolved_tasks},
          {"unresolved_tasks", report.unresolved_tasks}};
}

std::string render_study_table(const StudyReport& report) {
  std::string out = "Class Accuracy\n";
  char buf[64];
  for (const auto& c : report.per_class) {
    if (!c.accuracy) continue;
    std::snprintf(buf, sizeof buf, " %.2f\n", *c.accuracy);
    out += c.class_name + buf;
  }
  std::snprintf(buf, sizeof buf, "Weighted Average %.2f\n", report.weighted_average);
  return out + buf;
}

int majority_label(std::span<const int> labels) {
  const auto ones = std::count(labels.begin(), labels.end(), 1);
  return 2 * static_cast<std::size_t>(ones) > labels.size() ? 1 : 0;
}

namespace {

void check_votes_needed(std::size_t votes_needed) {
  if (votes_needed == 0 || votes_needed % 2 == 0) {
    fail(ErrorCode::ParamError,
         "votes_needed must be a positive odd number, got " + std::to_string(votes_needed));
  }
}

}  // namespace

std::vector<StudyTask> make_study_tasks(const ClassificationReport& report,
                                        const fs::path& image_root,
                                        const OverlayLookup& overlay_for,
                                        std::size_t votes_needed) {
  check_votes_needed(votes_needed);
  std::vector<StudyTask> tasks;
  std::vector<std::string> missing;
  for (const auto& p : report.predictions) {
    if (p.true_class != p.predicted_class) continue;
    const auto overlay = overlay_for(p.sample_id);
    if (!overlay) {
      missing.push_back(p.sample_id);
      continue;
    }
    StudyTask task;
    task.sample_id = p.sample_id;
    task.class_id = p.true_class;
    task.class_name = report.class_names.at(static_cast<std::size_t>(p.true_class));
    task.image = image_root / p.sample_id;
    task.overlay = *overlay;
    task.votes_needed = votes_needed;
    tasks.push_back(std::move(task));
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& id : missing) list += (list.empty() ? "" : ", ") + id;
    fail(ErrorCode::MissingOverlay, "no overlay for " + list);
  }
  if (tasks.empty()) fail(ErrorCode::EmptyStudy, "no correctly predicted samples");
  return tasks;
}

Study::Study(std::vector<std::string> class_names, std::vector<StudyTask> tasks)
    : class_names_(std::move(class_names)), tasks_(std::move(tasks)) {
  if (tasks_.empty()) fail(ErrorCode::EmptyStudy, "a study needs at least one task");
  std::sort(tasks_.begin(), tasks_.end(),
            [](const StudyTask& a, const StudyTask& b) { return a.sample_id < b.sample_id; });
  for (std::size_t i = 0; i < tasks_.size(); ++i) {
    check_votes_needed(tasks_[i].votes_needed);
    if (tasks_[i].class_id < 0 ||
        static_cast<std::size_t>(tasks_[i].class_id) >= class_names_.size()) {
      fail(ErrorCode::UnknownClass, "task " + tasks_[i].sample_id + " has class " +
                                        std::to_string(tasks_[i].class_id));
    }
    if (i > 0 && tasks_[i].sample_id == tasks_[i - 1].sample_id) {
      fail(ErrorCode::FormatError, "duplicate task " + tasks_[i].sample_id);
    }
  }
  states_.resize(tasks_.size());
}

std::optional<std::size_t> Study::find(const std::string& sample_id) const {
  const auto it = std::lower_bound(
      tasks_.begin(), tasks_.end(), sample_id,
      [](const StudyTask& t, const std::string& id) { return t.sample_id < id; });
  if (it == tasks_.end() || it->sample_id != sample_id) return std::nullopt;
  return static_cast<std::size_t>(it - tasks_.begin());
}

std::optional<std::size_t> Study::next_task(const std::string& annotator_id) const {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < tasks_.size(); ++i) {
    const TaskState& s = states_[i];
    if (s.resolved_label || s.annotators.count(annotator_id)) continue;
    // Tasks are sorted by sample id, so strict < keeps the first on ties.
    if (!best || s.labels.size() < states_[*best].labels.size()) best = i;
  }
  return best;
}

void Study::check_vote(const VoteRecord& vote) const {
  const auto i = find(vote.sample_id);
  if (!i) fail(ErrorCode::UnknownTask, "no task for sample " + vote.sample_id);
  if (vote.label != 0 && vote.label != 1) {
    fail(ErrorCode::InvalidLabel, "label must be 0 or 1, got " + std::to_string(vote.label));
  }
  const TaskState& s = states_[*i];
  if (s.annotators.count(vote.annotator_id)) {
    fail(ErrorCode::DuplicateVote,
         vote.annotator_id + " already voted on " + vote.sample_id);
  }
  if (s.resolved_label) fail(ErrorCode::ResolvedTask, vote.sample_id + " is already resolved");
}

VoteOutcome Study::apply(const VoteRecord& vote) {
  check_vote(vote);
  const std::size_t i = *find(vote.sample_id);
  TaskState& s = states_[i];
  s.labels.push_back(vote.label);
  s.annotators.insert(vote.annotator_id);
  if (s.labels.size() == tasks_[i].votes_needed) s.resolved_label = majority_label(s.labels);
  return {s.labels.size(), s.resolved_label};
}

StudyReport Study::report() const {
  StudyReport out;
  out.per_class.resize(class_names_.size());
  for (std::size_t c = 0; c < class_names_.size(); ++c) out.per_class[c].class_name = class_names_[c];
  for (std::size_t i = 0; i < tasks_.size(); ++i) {
    if (!states_[i].resolved_label) {
      ++out.unresolved_tasks;
      continue;
    }
    ClassAccuracy& c = out.per_class[static_cast<std::size_t>(tasks_[i].class_id)];
    ++c.resolved;
    if (*states_[i].resolved_label == 1) ++c.positive;
    ++out.resolved_tasks;
  }
  if (out.resolved_tasks == 0) fail(ErrorCode::NoResolvedTasks, "no task has reached its quorum");
  double weighted = 0.0;
  for (auto& c : out.per_class) {
    if (c.resolved == 0) continue;
    c.accuracy = static_cast<double>(c.positive) / static_cast<double>(c.resolved);
    weighted += static_cast<double>(c.resolved) * *c.accuracy;
  }
  out.weighted_average = weighted / static_cast<double>(out.resolved_tasks);
  return out;
}

Study replay(std::vector<std::string> class_names, std::vector<StudyTask> tasks,
             std::span<const VoteRecord> votes) {
  Study study(std::move(class_names), std::move(tasks));
  for (const auto& v : votes) study.apply(v);
  return study;
}

json study_definition_to_json(const Study& study) {
  json tasks = json::array();
  for (const auto& t : study.tasks()) {
    tasks.push_back({{"sample_id", t.sample_id},
                     {"class_id", t.class_id},
                     {"class_name", t.class_name},
                     {"image", t.image.string()},
                     {"overlay", t.overlay.string()},
                     {"votes_needed", t.votes_needed}});
  }
  return {{"format", "evx-study"}, {"class_names", study.class_names()}, {"tasks", tasks}};
}

Study study_from_definition(const json& doc) {
  try {
    std::vector<StudyTask> tasks;
    for (const auto& t : doc.at("tasks")) {
      tasks.push_back({t.at("sample_id").get<std::string>(), t.at("class_id").get<int>(),
                       t.at("class_name").get<std::string>(), t.at("image").get<std::string>(),
                       t.at("overlay").get<std::string>(), t.at("votes_needed").get<std::size_t>()});
    }
    return Study(doc.at("class_names").get<std::vector<std::string>>(), std::move(tasks));
  } catch (const json::exception& e) {
    fail(ErrorCode::FormatError, std::string("bad study definition: ") + e.what());
  }
}

std::vector<VoteRecord> read_vote_log(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot read " + path.string());
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::vector<VoteRecord> votes;
  std::size_t pos = 0, line_no = 0;
  while (pos < text.size()) {
    const std::size_t end = text.find('\n', pos);
    ++line_no;
    if (end == std::string::npos) break;  // unterminated tail from an interrupted write
    const std::string line = text.substr(pos, end - pos);
    pos = end + 1;
    if (line.empty()) continue;
    json doc = json::parse(line, nullptr, false);
    if (doc.is_discarded()) {
      fail(ErrorCode::FormatError, path.string() + ":" + std::to_string(line_no) + ": not JSON");
    }
    votes.push_back(vote_from_json(doc));
  }
  return votes;
}

// Service -----------------------------------------------------------------------

namespace {

constexpr const char* kStudyFile = "study.json";
constexpr const char* kVoteFile = "votes.jsonl";
constexpr const char* kAnnotatorFile = "annotators.txt";

void append_line(const fs::path& path, const std::string& line) {
  std::ofstream out(path, std::ios::app | std::ios::binary);
  const std::string data = line + "\n";
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  out.flush();
  if (!out) fail(ErrorCode::IoError, "cannot append to " + path.string());
}

bool valid_annotator_id(const std::string& id) {
  if (id.empty() || id.size() > 128) return false;
  return std::all_of(id.begin(), id.end(), [](char ch) { return ch > 0x20 && ch < 0x7f; });
}

std::string study_id_for(std::size_t n) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "study-%04zu", n);
  return buf;
}

}  // namespace

StudyService::StudyService(fs::path state_dir, Clock clock)
    : state_dir_(std::move(state_dir)), clock_(clock ? std::move(clock) : Clock(utc_timestamp)) {
  std::error_code ec;
  fs::create_directories(state_dir_, ec);
  if (ec) fail(ErrorCode::IoError, "cannot create " + state_dir_.string() + ": " + ec.message());

  if (std::ifstream in(state_dir_ / kAnnotatorFile); in) {
    for (std::string line; std::getline(in, line);) {
      if (!line.empty()) annotators_.insert(line);
    }
  }
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(state_dir_)) {
    if (e.is_directory() && fs::exists(e.path() / kStudyFile)) dirs.push_back(e.path());
  }
  std::sort(dirs.begin(), dirs.end());
  for (const auto& dir : dirs) {
    std::ifstream in(dir / kStudyFile);
    json doc = json::parse(in, nullptr, false);
    if (doc.is_discarded()) fail(ErrorCode::FormatError, "bad " + (dir / kStudyFile).string());
    Entry entry{study_from_definition(doc), {}};
    if (fs::exists(dir / kVoteFile)) entry.votes = read_vote_log(dir / kVoteFile);
    for (const auto& v : entry.votes) entry.study.apply(v);
    const std::string id = dir.filename().string();
    unsigned n = 0;
    if (std::sscanf(id.c_str(), "study-%u", &n) == 1) next_id_ = std::max<std::size_t>(next_id_, n + 1);
    studies_.emplace(id, std::move(entry));
  }
}

std::string StudyService::create_study(const ClassificationReport& report,
                                       const fs::path& image_root,
                                       const OverlayLookup& overlay_for,
                                       std::size_t votes_needed) {
  Study study(report.class_names, make_study_tasks(report, image_root, overlay_for, votes_needed));
  std::lock_guard lock(mutex_);
  const std::string id = study_id_for(next_id_);
  const fs::path dir = state_dir_ / id;
  fs::create_directories(dir);
  {
    std::ofstream out(dir / kStudyFile);
    out << study_definition_to_json(study).dump(1) << "\n";
    if (!out) fail(ErrorCode::IoError, "cannot write " + (dir / kStudyFile).string());
    std::ofstream votes(dir / kVoteFile, std::ios::trunc);
  }
  ++next_id_;
  studies_.emplace(id, Entry{std::move(study), {}});
  return id;
}

std::vector<std::string> StudyService::study_ids() const {
  std::lock_guard lock(mutex_);
  std::vector<std::string> ids;
  for (const auto& [id, e] : studies_) ids.push_back(id);
  return ids;
}

bool StudyService::register_annotator(const std::string& annotator_id) {
  if (!valid_annotator_id(annotator_id)) {
    fail(ErrorCode::ParamError, "annotator ids are 1-128 printable characters without spaces");
  }
  std::lock_guard lock(mutex_);
  if (annotators_.count(annotator_id)) return false;
  append_line(state_dir_ / kAnnotatorFile, annotator_id);
  annotators_.insert(annotator_id);
  return true;
}

bool StudyService::has_annotator(const std::string& annotator_id) const {
  std::lock_guard lock(mutex_);
  return annotators_.count(annotator_id) > 0;
}

const StudyService::Entry& StudyService::entry(const std::string& study_id) const {
  const auto it = studies_.find(study_id);
  if (it == studies_.end()) fail(ErrorCode::UnknownStudy, "no study " + study_id);
  return it->second;
}

void StudyService::require_annotator(const std::string& annotator_id) const {
  if (!annotators_.count(annotator_id)) {
    fail(ErrorCode::UnknownAnnotator, "annotator '" + annotator_id + "' is not registered");
  }
}

StudyService::Dispatch StudyService::next_task(const std::string& study_id,
                                               const std::string& annotator_id) const {
  std::lock_guard lock(mutex_);
  const Entry& e = entry(study_id);
  require_annotator(annotator_id);
  Dispatch out;
  out.total = e.study.tasks().size();
  for (std::size_t t = 0; t < out.total; ++t) {
    if (e.study.state(t).annotators.count(annotator_id)) ++out.completed;
  }
  if (const auto i = e.study.next_task(annotator_id)) {
    out.task = e.study.tasks()[*i];
    out.votes = e.study.state(*i).labels.size();
  }
  return out;
}

VoteOutcome StudyService::submit_vote(const std::string& study_id,
                                      const std::string& annotator_id,
                                      const std::string& sample_id, int label) {
  std::lock_guard lock(mutex_);
  entry(study_id);
  require_annotator(annotator_id);
  Entry& e = studies_.at(study_id);
  const VoteRecord vote{sample_id, annotator_id, label, clock_()};
  e.study.check_vote(vote);
  append_line(state_dir_ / study_id / kVoteFile, vote_to_json(vote).dump());
  e.votes.push_back(vote);
  return e.study.apply(vote);
}

StudyReport StudyService::report(const std::string& study_id) const {
  std::lock_guard lock(mutex_);
  return entry(study_id).study.report();
}

std::vector<VoteRecord> StudyService::votes(const std::string& study_id) const {
  std::lock_guard lock(mutex_);
  return entry(study_id).votes;
}

std::optional<StudyTask> StudyService::find_task(const std::string& sample_id) const {
  std::lock_guard lock(mutex_);
  for (const auto& [id, e] : studies_) {
    if (const auto i = e.study.find(sample_id)) return e.study.tasks()[*i];
  }
  return std::nullopt;
}

}  // namespace evx
