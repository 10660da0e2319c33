#pragma once

#include <atomic>
#include <cstdint>
#include <string>
#include <thread>
#include <vector>

#include "dfme/victim.hpp"

namespace dfme {

// Wire protocol: each message is a 4-byte big-endian payload length followed
// by a JSON payload. Requests:
//   {"op":"query","mode":"HL"|"SL","shape":[B,D],"data":[...]}
//   {"op":"status"}
// Responses:
//   {"labels":[...]} | {"probs":[[...],...]} |
//   {"error":"budget_exhausted","remaining":R} | {"error":...,"message":...}
//   {"spent":S,"budget":B}
// Floats are serialized as decimal with 17 significant digits, so parsing
// recovers the exact double.

std::string format_double(double v);

std::string encode_query_request(ResponseMode mode, const Tensor& batch);
std::string encode_status_request();
std::string encode_response(const VictimResponse& resp);
std::string encode_budget_error(std::int64_t remaining);
std::string encode_error(const std::string& code, const std::string& message);
std::string encode_status(std::int64_t spent, std::int64_t budget);

struct ParsedRequest {
  std::string op;
  ResponseMode mode = ResponseMode::kHardLabel;
  Tensor batch;  // query only
};

ParsedRequest parse_request(const std::string& payload);

// Client-side response decoding. Throws BudgetExhausted for budget errors
// and Error for any other error payload.
VictimResponse parse_response(const std::string& payload, ResponseMode expected_mode);
std::pair<std::int64_t, std::int64_t> parse_status(const std::string& payload);

// Blocking frame IO over a connected socket.
void send_frame(int fd, const std::string& payload);
std::string recv_frame(int fd);

// Splits "host:port". Host defaults to 127.0.0.1 when the host part is empty.
std::pair<std::string, std::uint16_t> parse_endpoint(const std::string& endpoint);

// Serves one LocalVictimOracle over the wire protocol. Single-threaded poll
// loop: connections are multiplexed but requests are processed strictly one
// at a time against the shared ledger.
class VictimServer {
 public:
  // Binds immediately; port 0 picks an ephemeral port.
  VictimServer(LocalVictimOracle& oracle, const std::string& host, std::uint16_t port);
  ~VictimServer();

  VictimServer(const VictimServer&) = delete;
  VictimServer& operator=(const VictimServer&) = delete;

  std::uint16_t port() const { return port_; }

  void run();    // blocks until stop()
  void start();  // runs the loop on a background thread
  void stop();

 private:
  std::string handle(const std::string& payload);

  LocalVictimOracle& oracle_;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::atomic<bool> stop_{false};
  std::thread thread_;
};

// VictimOracle backed by a remote VictimServer. Keeps one connection open
// and reconnects on demand.
class RemoteVictimOracle final : public VictimOracle {
 public:
  RemoteVictimOracle(const std::string& host, std::uint16_t port, ResponseMode mode);
  explicit RemoteVictimOracle(const std::string& endpoint, ResponseMode mode);
  ~RemoteVictimOracle() override;

  VictimResponse query(const Tensor& batch) override;
  ResponseMode mode() const override { return mode_; }
  std::int64_t spent() override;
  std::int64_t budget() override;

 private:
  std::string exchange(const std::string& payload);
  void connect_if_needed();
  void close_connection();

  std::string host_;
  std::uint16_t port_ = 0;
  ResponseMode mode_;
  int fd_ = -1;
};

}  // namespace dfme
