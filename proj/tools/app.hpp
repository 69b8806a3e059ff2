#pragma once

#include <atomic>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include "lvseg/errors.hpp"
#include "lvseg/pipeline.hpp"

namespace httplib {
class Server;
}

namespace lvseg::app {

namespace fs = std::filesystem;

/// Process exit codes shared by every command.
enum ExitCode : int { kOk = 0, kValidation = 1, kRegistration = 2 };

struct SegmentArgs {
  fs::path volume;
  fs::path annotation;
  double theta_d = 5.0;
  double spatial_theta_d = 1.0;
  fs::path out;
  std::optional<fs::path> config;
  std::optional<fs::path> truth;
};

/// Writes meshes/frame_NNN.obj, volumes.csv, summary.json and, with a truth
/// directory, report.json plus metrics.csv.
int cmd_segment(const SegmentArgs& a);
/// `spec` is a suite name or a JSON spec file; `seed` overrides its RNG seed.
int cmd_phantom(const std::string& spec, const fs::path& out, std::optional<std::uint64_t> seed = std::nullopt);
/// Compares pred_dir/frame_*.obj against truth_dir/frame_*.obj.
int cmd_evaluate(const fs::path& pred_dir, const fs::path& truth_dir, const fs::path& out);
int cmd_experiment(const std::string& name, const fs::path& out, int frame_stride = 0);

/// Runs `body`, mapping ValidationError to 1 and RegistrationError to 2 with a
/// one-line diagnostic on stderr.
template <class F>
int guarded(F&& body) {
  try {
    return body();
  } catch (const ValidationError& e) {
    std::cerr << "error " << e.what() << "\n";
    return kValidation;
  } catch (const RegistrationError& e) {
    std::cerr << "registration failed: " << e.what() << "\n";
    return kRegistration;
  }
}

/// Reads a JSON RegistrationConfig file.
reg::RegistrationConfig read_config(const fs::path& path);

/// Segments and writes the output directory layout of cmd_segment.
void run_segmentation(const Volume4D& vol, const StudyAnnotation& ann, const pipeline::Options& opt,
                      const fs::path& out, const std::optional<fs::path>& truth);

enum class JobStatus { Pending, Running, Done, Failed };
const char* job_status_name(JobStatus s);

struct JobRecord {
  std::string id;
  std::string study;
  fs::path dir;
  StudyAnnotation annotation;
  double theta_d = 5.0;
  double spatial_theta_d = 1.0;
  JobStatus status = JobStatus::Pending;
  std::string error;
  int frames = 0;
};

/// HTTP service over a directory of studies (subdirectories holding
/// volume.json). Study inputs are never written; posted annotations and job
/// outputs live under work_dir.
class Service {
 public:
  Service(fs::path data_root, fs::path work_dir);
  ~Service();

  /// Binds and serves on a background thread; returns the bound port.
  int start(const std::string& host, int port);
  /// Blocks serving on the calling thread.
  void listen(const std::string& host, int port);
  void stop();

  /// Waits until no job is pending or running.
  void wait_idle();

 private:
  void routes();
  void worker_loop();
  std::shared_ptr<const Volume4D> volume(const std::string& study);
  std::optional<StudyAnnotation> annotation(const std::string& study);
  bool has_study(const std::string& study) const;

  fs::path data_root_;
  fs::path work_dir_;
  std::unique_ptr<httplib::Server> server_;
  std::thread server_thread_;

  std::mutex mu_;
  std::condition_variable cv_;
  std::map<std::string, std::shared_ptr<const Volume4D>> volumes_;
  std::map<std::string, JobRecord> jobs_;
  std::deque<std::string> queue_;
  int next_job_ = 1;
  bool stopping_ = false;
  bool busy_ = false;
  std::thread worker_;
};

}  // namespace lvseg::app
