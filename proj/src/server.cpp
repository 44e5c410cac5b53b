#include "sstsne/server.hpp"

#include <boost/asio/dispatch.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <boost/asio/strand.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include <deque>
#include <system_error>
#include <thread>
#include <vector>

namespace sstsne::service {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;

namespace {

// Returns the session id when target is /sessions/{id}/stream.
std::optional<std::string> stream_target(std::string_view target) {
  const auto q = target.find('?');
  target = target.substr(0, q);
  constexpr std::string_view prefix = "/sessions/";
  constexpr std::string_view suffix = "/stream";
  if (target.size() <= prefix.size() + suffix.size()) return std::nullopt;
  if (target.substr(0, prefix.size()) != prefix) return std::nullopt;
  if (target.substr(target.size() - suffix.size()) != suffix) return std::nullopt;
  const auto id = target.substr(prefix.size(), target.size() - prefix.size() - suffix.size());
  if (id.find('/') != std::string_view::npos) return std::nullopt;
  return std::string(id);
}

class WebSocketSession : public std::enable_shared_from_this<WebSocketSession> {
 public:
  WebSocketSession(tcp::socket&& socket, ServiceCore& core, std::string session_id)
      : ws_(std::move(socket)), core_(core), session_id_(std::move(session_id)) {}

  void run(http::request<http::string_body> req) {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.binary(true);
    ws_.async_accept(req, beast::bind_front_handler(&WebSocketSession::on_accept, shared_from_this()));
  }

  void post_frame(std::shared_ptr<const std::string> payload, bool binary) {
    net::post(ws_.get_executor(), [self = shared_from_this(), payload = std::move(payload), binary] {
      self->queue_.push_back({std::move(payload), binary});
      if (self->queue_.size() == 1) self->write_next();
    });
  }

  void post_close() {
    net::post(ws_.get_executor(), [self = shared_from_this()] {
      self->closing_ = true;
      if (self->queue_.empty()) self->do_close();
    });
  }

 private:
  struct Sink : FrameSink {
    std::weak_ptr<WebSocketSession> owner;
    void send(std::shared_ptr<const std::string> frame) override {
      if (auto s = owner.lock()) s->post_frame(std::move(frame), true);
    }
    void close() override {
      if (auto s = owner.lock()) s->post_close();
    }
  };

  void on_accept(beast::error_code ec) {
    if (ec) return;
    try {
      session_ = core_.find_session(session_id_);
      auto sink = std::make_shared<Sink>();
      sink->owner = weak_from_this();
      token_ = session_->subscribe(sink);
    } catch (const std::exception& e) {
      post_frame(std::make_shared<const std::string>(nlohmann::json{{"error", e.what()}}.dump()), false);
      post_close();
      return;
    }
    do_read();
  }

  void do_read() {
    ws_.async_read(buffer_, beast::bind_front_handler(&WebSocketSession::on_read, shared_from_this()));
  }

  void on_read(beast::error_code ec, std::size_t) {
    if (ec) {
      detach();
      return;
    }
    const std::string text = beast::buffers_to_string(buffer_.data());
    buffer_.consume(buffer_.size());
    nlohmann::json reply;
    try {
      reply = core_.act(session_id_, nlohmann::json::parse(text));
    } catch (const RequestError& e) {
      reply = {{"error", e.what()}, {"status", e.status()}};
    } catch (const std::exception& e) {
      reply = {{"error", e.what()}, {"status", 400}};
    }
    post_frame(std::make_shared<const std::string>(reply.dump()), false);
    do_read();
  }

  void write_next() {
    ws_.binary(queue_.front().binary);
    ws_.async_write(net::buffer(*queue_.front().payload),
                    beast::bind_front_handler(&WebSocketSession::on_write, shared_from_this()));
  }

  void on_write(beast::error_code ec, std::size_t) {
    if (ec) {
      detach();
      return;
    }
    queue_.pop_front();
    if (!queue_.empty())
      write_next();
    else if (closing_)
      do_close();
  }

  void do_close() {
    ws_.async_close(websocket::close_code::normal, [self = shared_from_this()](beast::error_code) { self->detach(); });
  }

  void detach() {
    if (session_ && token_) session_->unsubscribe(token_);
    token_ = 0;
  }

  struct Outgoing {
    std::shared_ptr<const std::string> payload;
    bool binary;
  };

  websocket::stream<beast::tcp_stream> ws_;
  ServiceCore& core_;
  std::string session_id_;
  std::shared_ptr<Session> session_;
  std::uint64_t token_ = 0;
  beast::flat_buffer buffer_;
  std::deque<Outgoing> queue_;
  bool closing_ = false;
};

class HttpSession : public std::enable_shared_from_this<HttpSession> {
 public:
  HttpSession(tcp::socket&& socket, ServiceCore& core) : stream_(std::move(socket)), core_(core) {}

  void run() {
    net::dispatch(stream_.get_executor(), beast::bind_front_handler(&HttpSession::do_read, shared_from_this()));
  }

 private:
  void do_read() {
    parser_.emplace();
    parser_->body_limit(64 * 1024 * 1024);
    stream_.expires_after(std::chrono::seconds(60));
    http::async_read(stream_, buffer_, *parser_, beast::bind_front_handler(&HttpSession::on_read, shared_from_this()));
  }

  void on_read(beast::error_code ec, std::size_t) {
    if (ec) {
      stream_.socket().shutdown(tcp::socket::shutdown_send, ec);
      return;
    }
    auto req = parser_->release();
    if (websocket::is_upgrade(req)) {
      if (const auto id = stream_target(std::string_view(req.target().data(), req.target().size()))) {
        stream_.expires_never();
        std::make_shared<WebSocketSession>(stream_.release_socket(), core_, *id)->run(std::move(req));
        return;
      }
    }
    const Response r = core_.handle(std::string_view(req.method_string().data(), req.method_string().size()),
                                    std::string_view(req.target().data(), req.target().size()), req.body());
    auto res = std::make_shared<http::response<http::string_body>>(static_cast<http::status>(r.status), req.version());
    res->set(http::field::server, "sstsne");
    res->set(http::field::content_type, r.content_type);
    res->set(http::field::access_control_allow_origin, "*");
    res->keep_alive(req.keep_alive());
    res->body() = r.body;
    res->prepare_payload();
    response_ = res;
    http::async_write(stream_, *res, beast::bind_front_handler(&HttpSession::on_write, shared_from_this(), res->need_eof()));
  }

  void on_write(bool close, beast::error_code ec, std::size_t) {
    response_.reset();
    if (ec || close) {
      stream_.socket().shutdown(tcp::socket::shutdown_send, ec);
      return;
    }
    do_read();
  }

  beast::tcp_stream stream_;
  beast::flat_buffer buffer_;
  std::optional<http::request_parser<http::string_body>> parser_;
  std::shared_ptr<void> response_;
  ServiceCore& core_;
};

}  // namespace

struct Server::Impl {
  Impl(ServiceCore& c, const std::string& addr, unsigned short p, int t)
      : core(c), address(addr), port(p), threads(std::max(1, t)), ioc(threads), acceptor(net::make_strand(ioc)) {}

  void do_accept() {
    acceptor.async_accept(net::make_strand(ioc), [this](beast::error_code ec, tcp::socket socket) {
      if (ec) return;
      std::make_shared<HttpSession>(std::move(socket), core)->run();
      do_accept();
    });
  }

  ServiceCore& core;
  std::string address;
  unsigned short port;
  int threads;
  net::io_context ioc;
  tcp::acceptor acceptor;
  std::vector<std::thread> workers;
  std::mutex mutex;
  std::condition_variable stopped_cv;
  bool stopped = false;
  unsigned short bound_port = 0;
};

Server::Server(ServiceCore& core, const std::string& address, unsigned short port, int threads)
    : impl_(std::make_unique<Impl>(core, address, port, threads)) {}

Server::~Server() { stop(); }

void Server::start() {
  try {
    const auto endpoint = tcp::endpoint(net::ip::make_address(impl_->address), impl_->port);
    impl_->acceptor.open(endpoint.protocol());
    impl_->acceptor.set_option(net::socket_base::reuse_address(true));
    impl_->acceptor.bind(endpoint);
    impl_->acceptor.listen(net::socket_base::max_listen_connections);
  } catch (const boost::system::system_error& e) {
    // callers only see standard exceptions
    throw std::system_error(std::error_code(e.code().value(), std::system_category()), e.what());
  }
  impl_->bound_port = impl_->acceptor.local_endpoint().port();
  impl_->do_accept();
  for (int t = 0; t < impl_->threads; ++t) impl_->workers.emplace_back([this] { impl_->ioc.run(); });
}

void Server::stop() {
  if (!impl_) return;
  {
    std::lock_guard lock(impl_->mutex);
    if (impl_->stopped) return;
    impl_->stopped = true;
  }
  impl_->core.close_all();
  net::post(impl_->acceptor.get_executor(), [this] {
    beast::error_code ec;
    impl_->acceptor.close(ec);
  });
  impl_->ioc.stop();
  for (auto& w : impl_->workers)
    if (w.joinable()) w.join();
  impl_->stopped_cv.notify_all();
}

void Server::wait() {
  std::unique_lock lock(impl_->mutex);
  impl_->stopped_cv.wait(lock, [&] { return impl_->stopped; });
}

unsigned short Server::port() const { return impl_->bound_port; }

}  // namespace sstsne::service
