#pragma once

// Model-runner protocol: a separate executable answers `export` (write a
// tensor bundle for an image) and `infer` (top-5 for a batch of images)
// through files. The CLI drives it as a subprocess with a timeout.

#include <fcntl.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <array>
#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "advise/common.hpp"
#include "advise/tensor_store.hpp"

namespace advise {

namespace fs = std::filesystem;

struct RunnerHandle {
  std::string command;  // shell command prefix, e.g. "python3 -m advise_runner"
  fs::path workdir;     // empty: inherit
  int capacity = 64;    // images per infer call
  double timeout_seconds = 600.0;

  void validate() const {
    if (command.empty()) throw ValidationError("runner command is empty");
    if (!(timeout_seconds > 0.0)) throw ValidationError("runner timeout must be positive");
    if (capacity < 1) throw ValidationError("runner capacity must be >= 1");
  }
};

struct ExportRequest {
  fs::path image;
  std::string model = "default";
  std::string layer = "last_conv";
  std::string target = "top1";  // "top1" or a class index
  fs::path out;
};

struct InferImage {
  std::string id;
  fs::path path;
};

struct InferRequest {
  std::vector<InferImage> images;
  std::vector<int> classes;  // classes whose score is reported for every image
};

struct InferResult {
  std::string id;
  std::array<int, 5> topk_indices{};
  std::array<double, 5> topk_scores{};
  std::map<int, double> score_for_class;

  double score(int cls) const {
    auto it = score_for_class.find(cls);
    if (it == score_for_class.end()) throw RunnerError("response for '" + id + "' lacks class " + std::to_string(cls));
    return it->second;
  }
};

inline nlohmann::ordered_json request_to_json(const InferRequest& r) {
  nlohmann::ordered_json j;
  j["images"] = nlohmann::ordered_json::array();
  for (const auto& im : r.images) j["images"].push_back({{"id", im.id}, {"path", im.path.string()}});
  j["topk"] = 5;
  j["classes"] = r.classes;
  return j;
}

inline InferRequest request_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("images") || !j["images"].is_array())
    throw ValidationError("requests document lacks an \"images\" array");
  if (j.contains("topk") && j["topk"] != 5) throw ValidationError("only topk = 5 is supported");
  InferRequest r;
  for (const auto& im : j["images"]) {
    if (!im.contains("id") || !im.contains("path")) throw ValidationError("request image needs id and path");
    r.images.push_back({im["id"].get<std::string>(), im["path"].get<std::string>()});
  }
  if (j.contains("classes"))
    for (const auto& c : j["classes"]) r.classes.push_back(c.get<int>());
  return r;
}

inline nlohmann::ordered_json result_to_json(const InferResult& r) {
  nlohmann::ordered_json j;
  j["id"] = r.id;
  j["topk_indices"] = r.topk_indices;
  j["topk_scores"] = r.topk_scores;
  nlohmann::ordered_json s = nlohmann::ordered_json::object();
  for (const auto& [c, v] : r.score_for_class) s[std::to_string(c)] = v;
  j["score_for_class"] = std::move(s);
  return j;
}

/// Parses and validates a responses document against the request it answers.
/// Results are returned in request order.
inline std::vector<InferResult> responses_from_json(const nlohmann::json& j, const InferRequest& req) {
  if (!j.is_object() || !j.contains("results") || !j["results"].is_array())
    throw RunnerError("responses document lacks a \"results\" array");
  std::map<std::string, InferResult> by_id;
  for (const auto& e : j["results"]) {
    if (!e.is_object() || !e.contains("id") || !e["id"].is_string()) throw RunnerError("response entry without id");
    const std::string id = e["id"].get<std::string>();
    if (e.contains("error")) throw RunnerError("runner failed on '" + id + "': " + e["error"].dump());
    InferResult r;
    r.id = id;
    const auto& idx = e.value("topk_indices", nlohmann::json());
    const auto& sc = e.value("topk_scores", nlohmann::json());
    if (!idx.is_array() || idx.size() != 5)
      throw RunnerError("response '" + id + "': topk_indices must have exactly 5 entries");
    if (!sc.is_array() || sc.size() != 5)
      throw RunnerError("response '" + id + "': topk_scores must have exactly 5 entries");
    for (std::size_t i = 0; i < 5; ++i) {
      if (!idx[i].is_number_integer()) throw RunnerError("response '" + id + "': non-integer class index");
      if (!sc[i].is_number()) throw RunnerError("response '" + id + "': non-numeric score");
      r.topk_indices[i] = idx[i].get<int>();
      r.topk_scores[i] = sc[i].get<double>();
      if (!(r.topk_scores[i] >= 0.0 && r.topk_scores[i] <= 1.0))
        throw RunnerError("response '" + id + "': score outside [0,1]");
    }
    if (e.contains("score_for_class")) {
      for (const auto& [k, v] : e["score_for_class"].items()) {
        if (!v.is_number()) throw RunnerError("response '" + id + "': non-numeric class score");
        const double s = v.get<double>();
        if (!(s >= 0.0 && s <= 1.0)) throw RunnerError("response '" + id + "': class score outside [0,1]");
        r.score_for_class[std::stoi(k)] = s;
      }
    }
    by_id[id] = std::move(r);
  }
  std::vector<InferResult> out;
  for (const auto& im : req.images) {
    auto it = by_id.find(im.id);
    if (it == by_id.end()) throw RunnerError("runner returned no result for '" + im.id + "'");
    for (int c : req.classes) (void)it->second.score(c);
    out.push_back(std::move(it->second));
  }
  return out;
}

/// Anything that can export bundles and classify images.
class ModelRunner {
 public:
  virtual ~ModelRunner() = default;
  virtual TensorBundle export_bundle(const ExportRequest& req) = 0;
  virtual std::vector<InferResult> infer(const InferRequest& req) = 0;
};

/// Single-quotes `s` for /bin/sh.
inline std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'')
      out += "'\\''";
    else
      out += c;
  }
  return out + "'";
}

/// Runs `command` through /bin/sh in its own process group, stdout and
/// stderr going to `log`. Kills the whole group once `timeout` expires.
inline void run_shell(const std::string& command, const fs::path& workdir, double timeout, const fs::path& log) {
  const int fd = ::open(log.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
  if (fd < 0) throw RunnerError("cannot open runner log " + log.string() + ": " + std::strerror(errno));
  const pid_t pid = ::fork();
  if (pid < 0) {
    ::close(fd);
    throw RunnerError(std::string("fork failed: ") + std::strerror(errno));
  }
  if (pid == 0) {
    ::setpgid(0, 0);
    ::dup2(fd, 1);
    ::dup2(fd, 2);
    if (!workdir.empty() && ::chdir(workdir.c_str()) != 0) ::_exit(126);
    ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }
  ::close(fd);
  ::setpgid(pid, pid);
  const auto start = std::chrono::steady_clock::now();
  auto pause = std::chrono::milliseconds(2);
  int status = 0;
  for (;;) {
    const pid_t r = ::waitpid(pid, &status, WNOHANG);
    if (r == pid) break;
    if (r < 0 && errno != EINTR) throw RunnerError(std::string("waitpid failed: ") + std::strerror(errno));
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
    if (elapsed.count() > timeout) {
      ::kill(-pid, SIGKILL);
      ::waitpid(pid, &status, 0);
      throw RunnerTimeout("runner timed out after " + format_real(timeout) + " s: " + command);
    }
    std::this_thread::sleep_for(pause);
    pause = std::min(pause * 2, std::chrono::milliseconds(50));
  }
  if (WIFSIGNALED(status))
    throw RunnerError("runner killed by signal " + std::to_string(WTERMSIG(status)) + " (log: " + log.string() + ")");
  if (WEXITSTATUS(status) != 0)
    throw RunnerError("runner exited with status " + std::to_string(WEXITSTATUS(status)) + " (log: " + log.string() +
                      ")");
}

/// Sends one infer request through the subprocess protocol, splitting it
/// into batches of at most `handle.capacity` images.
inline std::vector<InferResult> run_model_runner(const RunnerHandle& handle, const InferRequest& req,
                                                 const fs::path& scratch) {
  handle.validate();
  fs::create_directories(scratch);
  std::vector<InferResult> out;
  const auto cap = static_cast<std::size_t>(handle.capacity);
  for (std::size_t start = 0, b = 0; start < req.images.size(); start += cap, ++b) {
    InferRequest part;
    part.classes = req.classes;
    const std::size_t stop = std::min(req.images.size(), start + cap);
    part.images.assign(req.images.begin() + static_cast<std::ptrdiff_t>(start),
                       req.images.begin() + static_cast<std::ptrdiff_t>(stop));
    const auto tag = std::to_string(b);
    const fs::path rq = fs::absolute(scratch / ("requests_" + tag + ".json"));
    const fs::path rs = fs::absolute(scratch / ("responses_" + tag + ".json"));
    {
      std::ofstream f(rq, std::ios::trunc);
      if (!f) throw RunnerError("cannot write " + rq.string());
      f << request_to_json(part).dump(2) << '\n';
    }
    fs::remove(rs);
    run_shell(handle.command + " infer --manifest " + shell_quote(rq.string()) + " --out " + shell_quote(rs.string()),
              handle.workdir, handle.timeout_seconds, fs::absolute(scratch / ("infer_" + tag + ".log")));
    std::ifstream in(rs);
    if (!in) throw RunnerError("runner produced no responses file " + rs.string());
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw RunnerError("malformed responses file " + rs.string() + ": " + e.what());
    }
    auto results = responses_from_json(j, part);
    for (auto& r : results) out.push_back(std::move(r));
  }
  return out;
}

class SubprocessRunner final : public ModelRunner {
 public:
  SubprocessRunner(RunnerHandle handle, fs::path scratch) : handle_(std::move(handle)), scratch_(std::move(scratch)) {
    handle_.validate();
  }

  TensorBundle export_bundle(const ExportRequest& req) override {
    fs::create_directories(scratch_);
    const std::string cmd = handle_.command + " export --image " + shell_quote(fs::absolute(req.image).string()) +
                            " --model " + shell_quote(req.model) + " --layer " + shell_quote(req.layer) +
                            " --class " + shell_quote(req.target) + " --out " +
                            shell_quote(fs::absolute(req.out).string());
    run_shell(cmd, handle_.workdir, handle_.timeout_seconds, fs::absolute(scratch_ / "export.log"));
    try {
      return read_bundle(req.out);
    } catch (const ValidationError& e) {
      throw RunnerError(std::string("runner export produced an invalid bundle: ") + e.what());
    }
  }

  std::vector<InferResult> infer(const InferRequest& req) override { return run_model_runner(handle_, req, scratch_); }

 private:
  RunnerHandle handle_;
  fs::path scratch_;
};

}  // namespace advise
