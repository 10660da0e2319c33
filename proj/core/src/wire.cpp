#include "dfme/wire.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstdio>
#include <cstring>
#include <map>

#include <nlohmann/json.hpp>

namespace dfme {

using nlohmann::json;

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

namespace {

void append_double_array(std::string& out, const double* values, std::size_t n) {
  out += '[';
  for (std::size_t i = 0; i < n; ++i) {
    if (i) out += ',';
    out += format_double(values[i]);
  }
  out += ']';
}

}  // namespace

std::string encode_query_request(ResponseMode mode, const Tensor& batch) {
  std::string out = "{\"op\":\"query\",\"mode\":\"";
  out += to_string(mode);
  out += "\",\"shape\":[";
  out += std::to_string(batch.rows());
  out += ',';
  out += std::to_string(batch.cols());
  out += "],\"data\":";
  out.reserve(out.size() + batch.size() * 20);
  append_double_array(out, batch.data.data(), batch.size());
  out += '}';
  return out;
}

std::string encode_status_request() { return "{\"op\":\"status\"}"; }

std::string encode_response(const VictimResponse& resp) {
  if (resp.mode == ResponseMode::kHardLabel) {
    std::string out = "{\"labels\":[";
    for (std::size_t i = 0; i < resp.hard_labels.size(); ++i) {
      if (i) out += ',';
      out += std::to_string(resp.hard_labels[i]);
    }
    out += "]}";
    return out;
  }
  std::string out = "{\"probs\":[";
  const std::size_t rows = resp.probabilities.rows();
  const std::size_t cols = resp.probabilities.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    if (r) out += ',';
    append_double_array(out, resp.probabilities.data.data() + r * cols, cols);
  }
  out += "]}";
  return out;
}

std::string encode_budget_error(std::int64_t remaining) {
  return "{\"error\":\"budget_exhausted\",\"remaining\":" + std::to_string(remaining) + "}";
}

std::string encode_error(const std::string& code, const std::string& message) {
  json j;
  j["error"] = code;
  j["message"] = message;
  return j.dump();
}

std::string encode_status(std::int64_t spent, std::int64_t budget) {
  return "{\"spent\":" + std::to_string(spent) + ",\"budget\":" + std::to_string(budget) + "}";
}

ParsedRequest parse_request(const std::string& payload) {
  json j;
  try {
    j = json::parse(payload);
  } catch (const json::exception& e) {
    throw IoError(std::string("request is not valid JSON: ") + e.what());
  }
  ParsedRequest req;
  req.op = j.value("op", "");
  if (req.op == "status") return req;
  if (req.op != "query") throw IoError("unknown op '" + req.op + "'");

  req.mode = response_mode_from_string(j.at("mode").get<std::string>());
  const auto shape = j.at("shape").get<std::vector<std::size_t>>();
  if (shape.size() != 2) throw DimensionError("query shape must have two entries");
  auto data = j.at("data").get<std::vector<double>>();
  if (data.size() != shape[0] * shape[1]) {
    throw DimensionError("query data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_string({shape[0], shape[1]}));
  }
  req.batch = Tensor({shape[0], shape[1]}, std::move(data));
  return req;
}

VictimResponse parse_response(const std::string& payload, ResponseMode expected_mode) {
  json j;
  try {
    j = json::parse(payload);
  } catch (const json::exception& e) {
    throw IoError(std::string("response is not valid JSON: ") + e.what());
  }
  if (j.contains("error")) {
    const std::string code = j["error"].get<std::string>();
    if (code == "budget_exhausted") {
      throw BudgetExhausted(j.value("remaining", std::int64_t{0}));
    }
    throw Error("server error '" + code + "': " + j.value("message", ""));
  }
  VictimResponse resp;
  resp.mode = expected_mode;
  if (j.contains("labels")) {
    if (expected_mode != ResponseMode::kHardLabel) {
      throw ModeError("got hard labels while expecting probabilities");
    }
    resp.hard_labels = j["labels"].get<std::vector<int>>();
    return resp;
  }
  if (j.contains("probs")) {
    if (expected_mode != ResponseMode::kSoftLabel) {
      throw ModeError("got probabilities while expecting hard labels");
    }
    const auto rows = j["probs"].get<std::vector<std::vector<double>>>();
    resp.probabilities = Tensor::from_rows(rows);
    return resp;
  }
  throw IoError("response carries neither labels nor probs");
}

std::pair<std::int64_t, std::int64_t> parse_status(const std::string& payload) {
  json j = json::parse(payload);
  if (j.contains("error")) {
    throw Error("status error: " + j["error"].get<std::string>());
  }
  return {j.at("spent").get<std::int64_t>(), j.at("budget").get<std::int64_t>()};
}

void send_frame(int fd, const std::string& payload) {
  const std::uint32_t len = static_cast<std::uint32_t>(payload.size());
  unsigned char header[4] = {static_cast<unsigned char>(len >> 24),
                             static_cast<unsigned char>(len >> 16),
                             static_cast<unsigned char>(len >> 8),
                             static_cast<unsigned char>(len)};
  std::string framed(reinterpret_cast<const char*>(header), 4);
  framed += payload;
  std::size_t sent = 0;
  while (sent < framed.size()) {
    const ssize_t n = ::send(fd, framed.data() + sent, framed.size() - sent, MSG_NOSIGNAL);
    if (n <= 0) {
      if (n < 0 && errno == EINTR) continue;
      throw IoError("send failed: " + std::string(std::strerror(errno)));
    }
    sent += static_cast<std::size_t>(n);
  }
}

namespace {

void recv_exact(int fd, char* buf, std::size_t len) {
  std::size_t got = 0;
  while (got < len) {
    const ssize_t n = ::recv(fd, buf + got, len - got, 0);
    if (n == 0) throw IoError("connection closed mid-frame");
    if (n < 0) {
      if (errno == EINTR) continue;
      throw IoError("recv failed: " + std::string(std::strerror(errno)));
    }
    got += static_cast<std::size_t>(n);
  }
}

}  // namespace

std::string recv_frame(int fd) {
  unsigned char header[4];
  recv_exact(fd, reinterpret_cast<char*>(header), 4);
  const std::uint32_t len = (std::uint32_t(header[0]) << 24) |
                            (std::uint32_t(header[1]) << 16) |
                            (std::uint32_t(header[2]) << 8) | std::uint32_t(header[3]);
  std::string payload(len, '\0');
  recv_exact(fd, payload.data(), len);
  return payload;
}

std::pair<std::string, std::uint16_t> parse_endpoint(const std::string& endpoint) {
  const auto colon = endpoint.rfind(':');
  if (colon == std::string::npos) {
    throw ConfigError("endpoint '" + endpoint + "' must look like host:port");
  }
  std::string host = endpoint.substr(0, colon);
  if (host.empty()) host = "127.0.0.1";
  const int port = std::stoi(endpoint.substr(colon + 1));
  if (port < 0 || port > 65535) throw ConfigError("endpoint port out of range");
  return {host, static_cast<std::uint16_t>(port)};
}

VictimServer::VictimServer(LocalVictimOracle& oracle, const std::string& host,
                           std::uint16_t port)
    : oracle_(oracle) {
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw IoError("socket: " + std::string(std::strerror(errno)));

  const int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));

  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    ::close(listen_fd_);
    listen_fd_ = -1;
    throw IoError("bad bind address '" + host + "'");
  }
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0) {
    const std::string err = std::strerror(errno);
    ::close(listen_fd_);
    listen_fd_ = -1;
    throw IoError("bind failed on " + host + ":" + std::to_string(port) + ": " + err);
  }
  if (::listen(listen_fd_, 16) < 0) {
    const std::string err = std::strerror(errno);
    ::close(listen_fd_);
    listen_fd_ = -1;
    throw IoError("listen failed: " + err);
  }

  sockaddr_in bound{};
  socklen_t len = sizeof(bound);
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&bound), &len);
  port_ = ntohs(bound.sin_port);
}

VictimServer::~VictimServer() {
  stop();
  if (listen_fd_ >= 0) ::close(listen_fd_);
}

std::string VictimServer::handle(const std::string& payload) {
  try {
    const ParsedRequest req = parse_request(payload);
    if (req.op == "status") {
      return encode_status(oracle_.spent(), oracle_.budget());
    }
    if (req.mode != oracle_.mode()) {
      return encode_error("mode_mismatch", "oracle answers in " + to_string(oracle_.mode()));
    }
    return encode_response(oracle_.query(req.batch));
  } catch (const BudgetExhausted& e) {
    return encode_budget_error(e.remaining);
  } catch (const DimensionError& e) {
    return encode_error("dimension_mismatch", e.what());
  } catch (const std::exception& e) {
    return encode_error("bad_request", e.what());
  }
}

void VictimServer::run() {
  // Per-connection receive buffers; frames are handled as soon as complete.
  std::map<int, std::string> buffers;

  while (!stop_.load()) {
    std::vector<pollfd> fds;
    fds.push_back({listen_fd_, POLLIN, 0});
    for (const auto& [fd, _] : buffers) fds.push_back({fd, POLLIN, 0});

    const int ready = ::poll(fds.data(), fds.size(), 100);
    if (ready < 0) {
      if (errno == EINTR) continue;
      break;
    }
    if (ready == 0) continue;

    if (fds[0].revents & POLLIN) {
      const int client = ::accept(listen_fd_, nullptr, nullptr);
      if (client >= 0) buffers.emplace(client, std::string());
    }

    for (std::size_t i = 1; i < fds.size(); ++i) {
      if (!(fds[i].revents & (POLLIN | POLLHUP | POLLERR))) continue;
      const int fd = fds[i].fd;
      char chunk[65536];
      const ssize_t n = ::recv(fd, chunk, sizeof(chunk), 0);
      if (n <= 0) {
        ::close(fd);
        buffers.erase(fd);
        continue;
      }
      auto& buf = buffers[fd];
      buf.append(chunk, static_cast<std::size_t>(n));

      // Drain complete frames.
      while (buf.size() >= 4) {
        const std::uint32_t len = (std::uint32_t(static_cast<unsigned char>(buf[0])) << 24) |
                                  (std::uint32_t(static_cast<unsigned char>(buf[1])) << 16) |
                                  (std::uint32_t(static_cast<unsigned char>(buf[2])) << 8) |
                                  std::uint32_t(static_cast<unsigned char>(buf[3]));
        if (buf.size() < 4 + static_cast<std::size_t>(len)) break;
        const std::string payload = buf.substr(4, len);
        buf.erase(0, 4 + static_cast<std::size_t>(len));
        try {
          send_frame(fd, handle(payload));
        } catch (const IoError&) {
          ::close(fd);
          buffers.erase(fd);
          break;
        }
      }
    }
  }

  for (const auto& [fd, _] : buffers) ::close(fd);
}

void VictimServer::start() {
  thread_ = std::thread([this] { run(); });
}

void VictimServer::stop() {
  stop_.store(true);
  if (thread_.joinable()) thread_.join();
}

RemoteVictimOracle::RemoteVictimOracle(const std::string& host, std::uint16_t port,
                                       ResponseMode mode)
    : host_(host), port_(port), mode_(mode) {}

RemoteVictimOracle::RemoteVictimOracle(const std::string& endpoint, ResponseMode mode)
    : mode_(mode) {
  auto [host, port] = parse_endpoint(endpoint);
  host_ = host;
  port_ = port;
}

RemoteVictimOracle::~RemoteVictimOracle() { close_connection(); }

void RemoteVictimOracle::close_connection() {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

void RemoteVictimOracle::connect_if_needed() {
  if (fd_ >= 0) return;
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd_ < 0) throw IoError("socket: " + std::string(std::strerror(errno)));

  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port_);
  if (::inet_pton(AF_INET, host_.c_str(), &addr.sin_addr) != 1) {
    close_connection();
    throw IoError("bad endpoint address '" + host_ + "'");
  }
  if (::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0) {
    const std::string err = std::strerror(errno);
    close_connection();
    throw IoError("connect to " + host_ + ":" + std::to_string(port_) + " failed: " + err);
  }
  const int one = 1;
  ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

std::string RemoteVictimOracle::exchange(const std::string& payload) {
  connect_if_needed();
  try {
    send_frame(fd_, payload);
    return recv_frame(fd_);
  } catch (const IoError&) {
    // One reconnect attempt, e.g. after a server-side idle close.
    close_connection();
    connect_if_needed();
    send_frame(fd_, payload);
    return recv_frame(fd_);
  }
}

VictimResponse RemoteVictimOracle::query(const Tensor& batch) {
  return parse_response(exchange(encode_query_request(mode_, batch)), mode_);
}

std::int64_t RemoteVictimOracle::spent() {
  return parse_status(exchange(encode_status_request())).first;
}

std::int64_t RemoteVictimOracle::budget() {
  return parse_status(exchange(encode_status_request())).second;
}

}  // namespace dfme
