// Copyright 2026 The diffrep-flow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "dflow/score.hpp"

#include <memory>
#include <string>
#include <thread>
#include <vector>

namespace httplib {
class Server;
}

namespace dflow {

/// Maximum request body accepted by the stub server and produced by the client.
inline constexpr std::size_t kMaxRequestBytes = 64u << 20;

/// One POST /v1/eps_hat round trip.
///
/// Request:  {"x": [[f64; d]; b], "sigma": f64, "conditioning": string, "cfg_scale": f64}
/// Response: {"eps_hat": [[f64; d]; b]}
///
/// Throws TransportError (connection failure, names the endpoint),
/// ProtocolError (HTTP error status or malformed body) or ShapeError (batch
/// or vector length differs from the request).
std::vector<Vec> remote_eps_hat(const std::string& endpoint, std::span<const Vec> xs, double sigma,
                                const std::string& conditioning, double cfg_scale);

/// Score model backed by a remote noise-predictor service. Stateless; each
/// call opens its own connection. View tags are appended to the
/// conditioning string as "label|view_tag".
class RemoteScoreModel : public ScoreModel {
 public:
  RemoteScoreModel(std::string endpoint, Index dim) : endpoint_(std::move(endpoint)), dim_(dim) {}

  Index dim() const override { return dim_; }
  const std::string& endpoint() const noexcept { return endpoint_; }

  Vec eps_hat(const Vec& x, double sigma, const Conditioning& cond, double cfg_scale) const override;
  std::vector<Vec> eps_hat_batch(std::span<const Vec> xs, double sigma, const Conditioning& cond,
                                 double cfg_scale) const override;

 private:
  std::string endpoint_;
  Index dim_;
};

/// Loopback HTTP server answering the eps_hat protocol from a local model.
/// Listens on 127.0.0.1; port 0 picks a free port. Stops on destruction.
class StubScoreServer {
 public:
  StubScoreServer(std::shared_ptr<const ScoreModel> model, int port = 0);
  ~StubScoreServer();

  StubScoreServer(const StubScoreServer&) = delete;
  StubScoreServer& operator=(const StubScoreServer&) = delete;

  int port() const noexcept { return port_; }
  std::string endpoint() const;

  /// Blocks until stop() is called from another thread.
  void wait();
  void stop();

 private:
  std::shared_ptr<const ScoreModel> model_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = 0;
};

}  // namespace dflow
