#pragma once

// Interactive labeling sessions. ServiceCore owns datasets and sessions and
// answers JSON requests; Server (server.hpp) puts it on the network.
//
// Stream frame layout, little-endian:
//   epoch u32, N u32, d u8, N*d f32 positions,
//   delta count u32, then count x (index u32, class u16)
// The delta lists annotations applied since the subscriber's previous frame;
// a subscriber's first frame carries every annotation.

#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sstsne/dataset.hpp"
#include "sstsne/emulator.hpp"
#include "sstsne/engine.hpp"

namespace sstsne::service {

using AnnotationDelta = std::pair<Index, ClassId>;

std::string encode_frame(std::uint32_t epoch, const Matrix& y, std::span<const AnnotationDelta> deltas);

class FrameSink {
 public:
  virtual ~FrameSink() = default;
  virtual void send(std::shared_ptr<const std::string> frame) = 0;
  virtual void close() {}
};

/// HTTP-style failure carried back to the transport.
class RequestError : public std::runtime_error {
 public:
  RequestError(int status, const std::string& message) : std::runtime_error(message), status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};

struct DatasetEntry {
  std::shared_ptr<const Dataset> data;
  std::optional<std::filesystem::path> image_dir;
};

/// One live embedding with server-side selection state. All public methods
/// lock the session; the optimization thread steps between them, so actions
/// land on epoch boundaries.
class Session {
 public:
  Session(std::string id, std::shared_ptr<const Dataset> data, const TsneConfig& config, double max_epochs_per_second);
  ~Session();
  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  const std::string& id() const { return id_; }

  nlohmann::json summary() const;
  nlohmann::json run();
  nlohmann::json pause();
  nlohmann::json step(int n);

  nlohmann::json select_focus(Index v);
  nlohmann::json set_k(Index k);
  nlohmann::json deselect(Index j);
  nlohmann::json apply_label(ClassId class_id);
  std::vector<Index> neighbors(Index v, Index k) const;

  /// index<TAB>class name, header line first, unlabeled samples omitted.
  std::string export_labels() const;
  std::string export_action_log() const;
  /// Inverse of export_labels; existing annotations must agree.
  void import_labels(std::string_view tsv);

  std::uint64_t subscribe(std::shared_ptr<FrameSink> sink);
  void unsubscribe(std::uint64_t token);

  /// Stops the optimization thread and closes all subscribers.
  void close();

  // Read-only snapshots for tests and exports.
  Matrix positions() const;
  AnnotationState annotations() const;
  ActionLog action_log() const;
  std::pair<Index, Index> counters() const;

 private:
  struct OpenEvent {
    Index focus = -1;
    Index k = 0;
    bool slider_paid = false;
    Index actions = 0;
    std::set<Index> deselected;
    std::vector<Index> selection;
  };
  struct Subscriber {
    std::shared_ptr<FrameSink> sink;
    std::size_t sent = 0;
  };

  nlohmann::json summary_locked() const;
  nlohmann::json selection_locked() const;
  void rebuild_selection_locked();
  void spend_locked(Index n);
  void step_locked();
  void broadcast_locked();
  void send_frame_locked(Subscriber& sub);
  void check_index_locked(Index i) const;
  void loop();

  std::string id_;
  std::shared_ptr<const Dataset> data_;
  mutable std::mutex mutex_;
  std::condition_variable wake_;
  Engine engine_;
  double max_epochs_per_second_;
  bool running_ = false;
  bool stopping_ = false;
  bool clamped_ = false;
  std::string last_error_;

  Index labels_ = 0;
  Index actions_ = 0;
  ActionLog log_;
  std::optional<OpenEvent> event_;
  std::vector<AnnotationDelta> applied_;

  std::map<std::uint64_t, Subscriber> subscribers_;
  std::uint64_t next_token_ = 1;
  std::thread worker_;
};

struct Response {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

class ServiceCore {
 public:
  ServiceCore() = default;
  ~ServiceCore();

  void register_dataset(const std::string& name, DatasetEntry entry);

  /// Registers every sub-directory holding features.tsv (plus optional
  /// labels.tsv and images/). A directory that itself holds features.tsv is
  /// registered under its own name. Returns the registered names.
  std::vector<std::string> register_directory(const std::filesystem::path& dir);

  /// Routes one request. Never throws; failures become JSON error bodies.
  Response handle(std::string_view method, std::string_view target, std::string_view body);

  /// Same action payloads as POST /sessions/{id}/actions, for message channels.
  nlohmann::json act(const std::string& session_id, const nlohmann::json& request);

  std::string create_session(const std::string& dataset, const nlohmann::json& config);
  std::shared_ptr<Session> find_session(const std::string& id) const;
  void close_all();

  double default_throttle = 60.0;

 private:
  Response route(std::string_view method, std::string_view path, std::string_view query, std::string_view body);

  mutable std::mutex mutex_;
  std::map<std::string, DatasetEntry> datasets_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::uint64_t session_counter_ = 0;
};

}  // namespace sstsne::service
