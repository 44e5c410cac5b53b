#include "sstsne/service.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include "sstsne/config_io.hpp"

namespace sstsne::service {

using nlohmann::json;

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
}

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

std::vector<std::string_view> split_path(std::string_view path) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (start <= path.size()) {
    const auto pos = path.find('/', start);
    const auto end = pos == std::string_view::npos ? path.size() : pos;
    if (end > start) parts.push_back(path.substr(start, end - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

std::string query_value(std::string_view query, std::string_view key) {
  std::size_t start = 0;
  while (start < query.size()) {
    auto end = query.find('&', start);
    if (end == std::string_view::npos) end = query.size();
    const auto pair = query.substr(start, end - start);
    const auto eq = pair.find('=');
    if (pair.substr(0, eq) == key) return eq == std::string_view::npos ? std::string() : std::string(pair.substr(eq + 1));
    start = end + 1;
  }
  return {};
}

Index parse_index(std::string_view text) {
  Index v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || ec != std::errc{} || ptr != text.data() + text.size())
    throw RequestError(400, "invalid index '" + std::string(text) + "'");
  return v;
}

json parse_body(std::string_view body) {
  if (body.empty()) return json::object();
  try {
    return json::parse(body);
  } catch (const json::exception& e) {
    throw RequestError(400, std::string("malformed JSON: ") + e.what());
  }
}

Index required_index(const json& req, const char* key) {
  const auto it = req.find(key);
  if (it == req.end() || !it->is_number_integer()) throw RequestError(400, std::string("missing integer '") + key + "'");
  return it->get<Index>();
}

Response json_response(const json& body, int status = 200) { return {status, "application/json", body.dump()}; }

std::string new_token(std::uint64_t counter) {
  static thread_local std::mt19937_64 rng{std::random_device{}()};
  std::ostringstream out;
  out << 's' << counter << '-' << std::hex << (rng() & 0xffffffffffULL);
  return out.str();
}

}  // namespace

std::string encode_frame(std::uint32_t epoch, const Matrix& y, std::span<const AnnotationDelta> deltas) {
  std::string out;
  out.reserve(9 + static_cast<std::size_t>(y.size()) * 4 + 4 + deltas.size() * 6);
  put_u32(out, epoch);
  put_u32(out, static_cast<std::uint32_t>(y.rows()));
  out.push_back(static_cast<char>(y.cols()));
  for (Index i = 0; i < y.rows(); ++i) {
    for (Index k = 0; k < y.cols(); ++k) {
      const float f = static_cast<float>(y(i, k));
      std::uint32_t bits = 0;
      std::memcpy(&bits, &f, sizeof(bits));
      put_u32(out, bits);
    }
  }
  put_u32(out, static_cast<std::uint32_t>(deltas.size()));
  for (const auto& [index, cls] : deltas) {
    put_u32(out, static_cast<std::uint32_t>(index));
    put_u16(out, static_cast<std::uint16_t>(cls));
  }
  return out;
}

// --- session -------------------------------------------------------------------

Session::Session(std::string id, std::shared_ptr<const Dataset> data, const TsneConfig& config,
                 double max_epochs_per_second)
    : id_(std::move(id)),
      data_(std::move(data)),
      engine_(data_->features, config),
      max_epochs_per_second_(max_epochs_per_second) {
  worker_ = std::thread([this] { loop(); });
}

Session::~Session() { close(); }

void Session::close() {
  {
    std::lock_guard lock(mutex_);
    if (stopping_) return;
    stopping_ = true;
    running_ = false;
  }
  wake_.notify_all();
  if (worker_.joinable()) worker_.join();
  std::map<std::uint64_t, Subscriber> subs;
  {
    std::lock_guard lock(mutex_);
    subs.swap(subscribers_);
  }
  for (auto& [token, sub] : subs) sub.sink->close();
}

void Session::loop() {
  using clock = std::chrono::steady_clock;
  std::unique_lock lock(mutex_);
  auto next = clock::now();
  while (true) {
    if (!running_) {
      wake_.wait(lock, [&] { return stopping_ || running_; });
      next = clock::now();  // no catch-up burst after a pause
    }
    if (stopping_) break;
    if (engine_.finished()) {
      running_ = false;
      continue;
    }
    try {
      step_locked();
    } catch (const std::exception& e) {
      last_error_ = e.what();
      running_ = false;
      continue;
    }
    broadcast_locked();
    if (engine_.finished()) running_ = false;
    if (max_epochs_per_second_ > 0.0) {
      next = std::max(next + std::chrono::duration_cast<clock::duration>(
                                 std::chrono::duration<double>(1.0 / max_epochs_per_second_)),
                      clock::now() - std::chrono::milliseconds(100));
      wake_.wait_until(lock, next, [&] { return stopping_; });
    }
  }
}

void Session::step_locked() { engine_.step(); }

json Session::summary_locked() const {
  json out{{"id", id_},
           {"dataset", data_->name},
           {"epoch", engine_.state().epoch},
           {"e_max", engine_.config().e_max},
           {"running", running_},
           {"clamped", clamped_},
           {"labels", labels_},
           {"actions", actions_},
           {"labeled", engine_.annotations().num_labeled()},
           {"n", engine_.state().size()},
           {"dims", engine_.state().dims()}};
  if (!last_error_.empty()) out["error"] = last_error_;
  return out;
}

json Session::selection_locked() const {
  json out = summary_locked();
  out["focus"] = event_ ? json(event_->focus) : json(nullptr);
  out["k"] = event_ ? event_->k : 0;
  out["selection"] = event_ ? json(event_->selection) : json::array();
  out["event_actions"] = event_ ? event_->actions : 0;
  return out;
}

json Session::summary() const {
  std::lock_guard lock(mutex_);
  return summary_locked();
}

json Session::run() {
  {
    std::lock_guard lock(mutex_);
    clamped_ = false;
    if (!engine_.finished()) running_ = true;
  }
  wake_.notify_all();
  return summary();
}

json Session::pause() {
  std::lock_guard lock(mutex_);
  running_ = false;
  return summary_locked();
}

json Session::step(int n) {
  std::lock_guard lock(mutex_);
  if (n < 0) throw RequestError(400, "step count must be >= 0");
  running_ = false;
  const int target = engine_.state().epoch + n;
  clamped_ = target > engine_.config().e_max;
  const int stop = std::min(target, engine_.config().e_max);
  try {
    while (engine_.state().epoch < stop) {
      step_locked();
      broadcast_locked();
    }
  } catch (const NumericalError& e) {
    last_error_ = e.what();
    throw RequestError(500, e.what());
  }
  return summary_locked();
}

void Session::check_index_locked(Index i) const {
  if (i < 0 || i >= engine_.state().size()) throw RequestError(400, "sample index out of range");
}

void Session::spend_locked(Index n) {
  actions_ += n;
  event_->actions += n;
}

void Session::rebuild_selection_locked() {
  auto& ev = *event_;
  ev.selection.clear();
  if (!ev.deselected.count(ev.focus)) ev.selection.push_back(ev.focus);
  if (ev.k > 0) {
    for (Index j : exact_knn(engine_.state().y, ev.focus, ev.k))
      if (!ev.deselected.count(j)) ev.selection.push_back(j);
  }
}

json Session::select_focus(Index v) {
  std::lock_guard lock(mutex_);
  check_index_locked(v);
  if (event_ && event_->actions > 0) {
    // An abandoned event keeps its spent actions in the log.
    LabelingEvent dropped;
    dropped.epoch = engine_.state().epoch;
    dropped.focus = event_->focus;
    dropped.chosen_k = event_->k;
    dropped.actions_spent = event_->actions;
    log_.append(std::move(dropped));
  }
  event_ = OpenEvent{};
  event_->focus = v;
  spend_locked(1);
  rebuild_selection_locked();
  return selection_locked();
}

json Session::set_k(Index k) {
  std::lock_guard lock(mutex_);
  if (!event_) throw RequestError(409, "set_k needs a focus sample");
  if (k < 0 || k > engine_.state().size() - 1) throw RequestError(400, "k out of range");
  if (!event_->slider_paid) {
    spend_locked(1);
    event_->slider_paid = true;
  }
  event_->k = k;
  rebuild_selection_locked();
  return selection_locked();
}

json Session::deselect(Index j) {
  std::lock_guard lock(mutex_);
  check_index_locked(j);
  if (!event_) throw RequestError(409, "nothing is selected");
  auto& sel = event_->selection;
  const auto it = std::find(sel.begin(), sel.end(), j);
  if (it == sel.end()) throw RequestError(409, "sample is not in the current selection");
  sel.erase(it);
  event_->deselected.insert(j);
  spend_locked(1);
  return selection_locked();
}

json Session::apply_label(ClassId class_id) {
  std::lock_guard lock(mutex_);
  if (class_id < 0 || class_id >= data_->num_classes()) throw RequestError(400, "unknown class id");
  if (!event_ || event_->selection.empty()) throw RequestError(409, "apply_label with an empty selection");

  LabelingEvent ev;
  ev.epoch = engine_.state().epoch;
  ev.focus = event_->focus;
  ev.chosen_k = event_->k;
  ev.actions_spent = event_->actions;
  for (Index j : event_->selection) {
    if (engine_.annotations().is_labeled(j)) continue;
    engine_.apply_label(j, class_id);
    applied_.emplace_back(j, class_id);
    ev.assigned.push_back(j);
  }
  ev.labels_applied = static_cast<Index>(ev.assigned.size());
  labels_ += ev.labels_applied;
  const Index written = ev.labels_applied;
  log_.append(std::move(ev));
  event_.reset();
  json out = selection_locked();
  out["written"] = written;
  return out;
}

std::vector<Index> Session::neighbors(Index v, Index k) const {
  std::lock_guard lock(mutex_);
  check_index_locked(v);
  if (k < 0) throw RequestError(400, "k must be >= 0");
  return exact_knn(engine_.state().y, v, std::min(k, engine_.state().size() - 1));
}

std::string Session::export_labels() const {
  std::lock_guard lock(mutex_);
  std::ostringstream out;
  out << "index\tclass\n";
  const auto& ann = engine_.annotations();
  for (Index i = 0; i < ann.size(); ++i)
    if (const auto c = ann.label(i)) out << i << '\t' << data_->class_names[static_cast<std::size_t>(*c)] << '\n';
  return out.str();
}

std::string Session::export_action_log() const {
  std::lock_guard lock(mutex_);
  std::ostringstream out;
  log_.write_csv(out);
  return out.str();
}

void Session::import_labels(std::string_view tsv) {
  std::lock_guard lock(mutex_);
  std::istringstream in{std::string(tsv)};
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (header) {
      header = false;
      if (line.rfind("index", 0) == 0) continue;
    }
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw RequestError(400, "label rows must be index<TAB>class");
    const Index i = parse_index(std::string_view(line).substr(0, tab));
    check_index_locked(i);
    const std::string name = line.substr(tab + 1);
    const auto it = std::find(data_->class_names.begin(), data_->class_names.end(), name);
    if (it == data_->class_names.end()) throw RequestError(400, "unknown class '" + name + "'");
    const auto cls = static_cast<ClassId>(it - data_->class_names.begin());
    if (const auto existing = engine_.annotations().label(i)) {
      if (*existing != cls) throw RequestError(409, "sample " + std::to_string(i) + " already carries another label");
      continue;
    }
    engine_.apply_label(i, cls);
    applied_.emplace_back(i, cls);
  }
}

void Session::send_frame_locked(Subscriber& sub) {
  const std::span<const AnnotationDelta> pending(applied_.data() + sub.sent, applied_.size() - sub.sent);
  auto frame = std::make_shared<const std::string>(
      encode_frame(static_cast<std::uint32_t>(engine_.state().epoch), engine_.state().y, pending));
  sub.sent = applied_.size();
  sub.sink->send(std::move(frame));
}

void Session::broadcast_locked() {
  for (auto& [token, sub] : subscribers_) send_frame_locked(sub);
}

std::uint64_t Session::subscribe(std::shared_ptr<FrameSink> sink) {
  std::lock_guard lock(mutex_);
  if (stopping_) throw RequestError(410, "session is closed");
  const std::uint64_t token = next_token_++;
  auto& sub = subscribers_[token];
  sub.sink = std::move(sink);
  send_frame_locked(sub);
  return token;
}

void Session::unsubscribe(std::uint64_t token) {
  std::lock_guard lock(mutex_);
  subscribers_.erase(token);
}

Matrix Session::positions() const {
  std::lock_guard lock(mutex_);
  return engine_.state().y;
}

AnnotationState Session::annotations() const {
  std::lock_guard lock(mutex_);
  return engine_.annotations();
}

ActionLog Session::action_log() const {
  std::lock_guard lock(mutex_);
  return log_;
}

std::pair<Index, Index> Session::counters() const {
  std::lock_guard lock(mutex_);
  return {labels_, actions_};
}

// --- core ------------------------------------------------------------------------

ServiceCore::~ServiceCore() { close_all(); }

void ServiceCore::close_all() {
  std::map<std::string, std::shared_ptr<Session>> sessions;
  {
    std::lock_guard lock(mutex_);
    sessions.swap(sessions_);
  }
  for (auto& [id, s] : sessions) s->close();
}

void ServiceCore::register_dataset(const std::string& name, DatasetEntry entry) {
  if (!entry.data) throw DataError("register_dataset: null dataset");
  entry.data->validate();
  std::lock_guard lock(mutex_);
  datasets_[name] = std::move(entry);
}

std::vector<std::string> ServiceCore::register_directory(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  std::vector<fs::path> candidates;
  if (fs::exists(dir / "features.tsv")) candidates.push_back(dir);
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_directory() && fs::exists(entry.path() / "features.tsv")) candidates.push_back(entry.path());
  std::sort(candidates.begin(), candidates.end());

  std::vector<std::string> names;
  for (const auto& path : candidates) {
    auto data = std::make_shared<Dataset>(load_features(path / "features.tsv"));
    data->name = fs::absolute(path).lexically_normal().filename().string();
    if (data->name.empty()) data->name = fs::absolute(path).parent_path().filename().string();
    if (fs::exists(path / "labels.tsv")) {
      auto table = load_labels(path / "labels.tsv", data->size());
      data->labels = std::move(table.ids);
      data->class_names = std::move(table.names);
    }
    DatasetEntry entry{data, std::nullopt};
    if (fs::is_directory(path / "images")) entry.image_dir = path / "images";
    register_dataset(data->name, std::move(entry));
    names.push_back(data->name);
  }
  return names;
}

std::string ServiceCore::create_session(const std::string& dataset, const json& config) {
  DatasetEntry entry;
  {
    std::lock_guard lock(mutex_);
    const auto it = datasets_.find(dataset);
    if (it == datasets_.end()) throw RequestError(404, "unknown dataset '" + dataset + "'");
    entry = it->second;
  }
  TsneConfig cfg;
  double throttle = default_throttle;
  if (config.is_object()) {
    update_from_json(cfg, config);
    if (config.contains("throttle")) throttle = config.at("throttle").get<double>();
  } else if (!config.is_null()) {
    throw RequestError(400, "config must be a JSON object");
  }
  cfg.validate();
  if (!(cfg.perplexity < static_cast<double>(entry.data->size())))
    throw RequestError(400, "perplexity must be smaller than the dataset size");

  std::string id;
  {
    std::lock_guard lock(mutex_);
    id = new_token(++session_counter_);
  }
  auto session = std::make_shared<Session>(id, entry.data, cfg, throttle);
  std::lock_guard lock(mutex_);
  sessions_[id] = std::move(session);
  return id;
}

std::shared_ptr<Session> ServiceCore::find_session(const std::string& id) const {
  std::lock_guard lock(mutex_);
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) throw RequestError(404, "unknown session '" + id + "'");
  return it->second;
}

json ServiceCore::act(const std::string& session_id, const json& req) {
  const auto session = find_session(session_id);
  const auto it = req.find("action");
  if (it == req.end() || !it->is_string()) throw RequestError(400, "missing 'action'");
  const std::string action = it->get<std::string>();
  if (action == "select_focus") return session->select_focus(required_index(req, "index"));
  if (action == "set_k") return session->set_k(required_index(req, "k"));
  if (action == "deselect") return session->deselect(required_index(req, "index"));
  if (action == "apply_label") {
    const auto cls = req.find("class");
    if (cls == req.end()) throw RequestError(400, "missing 'class'");
    if (cls->is_number_integer()) return session->apply_label(cls->get<ClassId>());
    if (cls->is_string()) {
      DatasetEntry entry;
      const std::string dataset = session->summary().at("dataset").get<std::string>();
      {
        std::lock_guard lock(mutex_);
        entry = datasets_.at(dataset);
      }
      const auto& names = entry.data->class_names;
      const auto pos = std::find(names.begin(), names.end(), cls->get<std::string>());
      if (pos == names.end()) throw RequestError(400, "unknown class '" + cls->get<std::string>() + "'");
      return session->apply_label(static_cast<ClassId>(pos - names.begin()));
    }
    throw RequestError(400, "'class' must be an id or a name");
  }
  throw RequestError(400, "unknown action '" + action + "'");
}

Response ServiceCore::handle(std::string_view method, std::string_view target, std::string_view body) {
  const auto q = target.find('?');
  const auto path = target.substr(0, q);
  const auto query = q == std::string_view::npos ? std::string_view{} : target.substr(q + 1);
  try {
    return route(method, path, query, body);
  } catch (const RequestError& e) {
    return json_response({{"error", e.what()}}, e.status());
  } catch (const ConfigError& e) {
    return json_response({{"error", e.what()}}, 400);
  } catch (const DataError& e) {
    return json_response({{"error", e.what()}}, 400);
  } catch (const json::exception& e) {
    return json_response({{"error", e.what()}}, 400);
  } catch (const std::exception& e) {
    return json_response({{"error", e.what()}}, 500);
  }
}

Response ServiceCore::route(std::string_view method, std::string_view path, std::string_view query,
                            std::string_view body) {
  const auto parts = split_path(path);
  const auto n = parts.size();
  auto is = [&](std::string_view m) { return method == m; };

  if (n == 1 && parts[0] == "health" && is("GET")) return json_response({{"status", "ok"}});

  if (n >= 1 && parts[0] == "datasets") {
    if (n == 1 && is("GET")) {
      json list = json::array();
      std::lock_guard lock(mutex_);
      for (const auto& [name, entry] : datasets_) {
        list.push_back({{"name", name},
                        {"size", entry.data->size()},
                        {"dim", entry.data->dim()},
                        {"classes", entry.data->class_names},
                        {"has_images", entry.image_dir.has_value()}});
      }
      return json_response(list);
    }
    if (n == 4 && parts[2] == "thumbnail" && is("GET")) {
      DatasetEntry entry;
      {
        std::lock_guard lock(mutex_);
        const auto it = datasets_.find(std::string(parts[1]));
        if (it == datasets_.end()) throw RequestError(404, "unknown dataset");
        entry = it->second;
      }
      const Index index = parse_index(parts[3]);
      if (!entry.image_dir) throw RequestError(404, "dataset has no image directory");
      const auto file = *entry.image_dir / (std::to_string(index) + ".png");
      std::ifstream in(file, std::ios::binary);
      if (!in) throw RequestError(404, "no thumbnail for sample " + std::to_string(index));
      std::ostringstream bytes;
      bytes << in.rdbuf();
      return {200, "image/png", bytes.str()};
    }
  }

  if (n >= 1 && parts[0] == "sessions") {
    if (n == 1 && is("POST")) {
      const json req = parse_body(body);
      if (!req.contains("dataset") || !req.at("dataset").is_string()) throw RequestError(400, "missing 'dataset'");
      const auto id = create_session(req.at("dataset").get<std::string>(), req.value("config", json()));
      return json_response(find_session(id)->summary());
    }
    if (n < 2) throw RequestError(404, "not found");
    const std::string id(parts[1]);
    if (n == 2 && is("GET")) return json_response(find_session(id)->summary());
    if (n == 2 && is("DELETE")) {
      std::shared_ptr<Session> s;
      {
        std::lock_guard lock(mutex_);
        const auto it = sessions_.find(id);
        if (it == sessions_.end()) throw RequestError(404, "unknown session");
        s = it->second;
        sessions_.erase(it);
      }
      s->close();
      return json_response({{"closed", id}});
    }
    const auto session = find_session(id);
    const auto verb = parts[2];
    if (n == 3 && verb == "control" && is("POST")) {
      const json req = parse_body(body);
      const std::string command = req.value("command", "");
      if (command == "run") return json_response(session->run());
      if (command == "pause") return json_response(session->pause());
      if (command == "step") return json_response(session->step(req.value("n", 1)));
      throw RequestError(400, "command must be run, pause or step");
    }
    if (n == 3 && verb == "actions" && is("POST")) return json_response(act(id, parse_body(body)));
    if (n == 3 && verb == "export" && is("GET")) {
      const std::string format = query_value(query, "format");
      if (format == "tsv") return {200, "text/tab-separated-values", session->export_labels()};
      if (format == "csv") return {200, "text/csv", session->export_action_log()};
      const auto [labels, actions] = session->counters();
      return json_response({{"labels", session->export_labels()},
                            {"action_log", session->export_action_log()},
                            {"counters", {{"labels", labels}, {"actions", actions}}}});
    }
    if (n == 3 && verb == "import" && is("POST")) {
      session->import_labels(body);
      return json_response(session->summary());
    }
    if (n == 4 && verb == "neighbors" && is("GET")) {
      const auto k = query_value(query, "k");
      const Index kk = k.empty() ? 10 : parse_index(k);
      return json_response({{"focus", parse_index(parts[3])}, {"neighbors", session->neighbors(parse_index(parts[3]), kk)}});
    }
    if (n == 3 && verb == "stream") throw RequestError(426, "stream requires a WebSocket upgrade");
  }
  throw RequestError(404, "not found");
}

}  // namespace sstsne::service
