// Copyright 2026 The diffrep-flow Authors
// SPDX-License-Identifier: Apache-2.0

#include "dflow/remote_score.hpp"

#include "dflow/error.hpp"

#include <httplib.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

namespace dflow {

namespace {

using nlohmann::json;

json to_json_batch(std::span<const Vec> xs) {
  json rows = json::array();
  for (const auto& x : xs) {
    rows.push_back(std::vector<double>(x.data(), x.data() + x.size()));
  }
  return rows;
}

std::vector<Vec> from_json_batch(const json& rows, const char* field) {
  if (!rows.is_array()) {
    throw ProtocolError(std::string("field '") + field + "' must be an array of arrays");
  }
  std::vector<Vec> out;
  out.reserve(rows.size());
  for (const auto& row : rows) {
    if (!row.is_array()) {
      throw ProtocolError(std::string("field '") + field + "' must be an array of arrays");
    }
    Vec v(static_cast<Index>(row.size()));
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (!row[i].is_number()) {
        throw ProtocolError(std::string("non-numeric entry in '") + field + "'");
      }
      v[static_cast<Index>(i)] = row[i].get<double>();
    }
    out.push_back(std::move(v));
  }
  return out;
}

std::string with_scheme(const std::string& endpoint) {
  if (endpoint.rfind("http://", 0) == 0 || endpoint.rfind("https://", 0) == 0) {
    return endpoint;
  }
  return "http://" + endpoint;
}

std::string conditioning_string(const Conditioning& cond) {
  return cond.view_tag.empty() ? cond.label : cond.label + "|" + cond.view_tag;
}

}  // namespace

std::vector<Vec> remote_eps_hat(const std::string& endpoint, std::span<const Vec> xs, double sigma,
                                const std::string& conditioning, double cfg_scale) {
  json body;
  body["x"] = to_json_batch(xs);
  body["sigma"] = sigma;
  body["conditioning"] = conditioning;
  body["cfg_scale"] = cfg_scale;
  const std::string payload = body.dump();
  if (payload.size() > kMaxRequestBytes) {
    throw ParameterError("eps_hat request of " + std::to_string(payload.size()) + " bytes exceeds the protocol limit");
  }

  httplib::Client client(with_scheme(endpoint));
  client.set_connection_timeout(5, 0);
  client.set_read_timeout(60, 0);
  auto res = client.Post("/v1/eps_hat", payload, "application/json");
  if (!res) {
    throw TransportError(endpoint, httplib::to_string(res.error()));
  }

  json reply;
  try {
    reply = json::parse(res->body);
  } catch (const json::parse_error& e) {
    throw ProtocolError("malformed response from " + endpoint + ": " + e.what());
  }
  if (res->status != 200) {
    const std::string msg = reply.is_object() && reply.contains("error") && reply["error"].is_string()
                                ? reply["error"].get<std::string>()
                                : res->body;
    throw ProtocolError("score service " + endpoint + " returned HTTP " + std::to_string(res->status) + ": " + msg);
  }
  if (!reply.is_object() || !reply.contains("eps_hat")) {
    throw ProtocolError("response from " + endpoint + " lacks 'eps_hat'");
  }
  auto eps = from_json_batch(reply["eps_hat"], "eps_hat");
  if (eps.size() != xs.size()) {
    throw ShapeError("score service returned " + std::to_string(eps.size()) + " rows for a batch of " +
                     std::to_string(xs.size()));
  }
  for (std::size_t i = 0; i < eps.size(); ++i) {
    if (eps[i].size() != xs[i].size()) {
      throw ShapeError("score service returned row " + std::to_string(i) + " of length " +
                       std::to_string(eps[i].size()) + ", expected " + std::to_string(xs[i].size()));
    }
  }
  return eps;
}

Vec RemoteScoreModel::eps_hat(const Vec& x, double sigma, const Conditioning& cond, double cfg_scale) const {
  return eps_hat_batch(std::span<const Vec>(&x, 1), sigma, cond, cfg_scale).front();
}

std::vector<Vec> RemoteScoreModel::eps_hat_batch(std::span<const Vec> xs, double sigma, const Conditioning& cond,
                                                 double cfg_scale) const {
  for (const auto& x : xs) {
    if (x.size() != dim_) {
      throw DimensionError("remote score model expects dimension " + std::to_string(dim_));
    }
  }
  return remote_eps_hat(endpoint_, xs, sigma, conditioning_string(cond), cfg_scale);
}

StubScoreServer::StubScoreServer(std::shared_ptr<const ScoreModel> model, int port)
    : model_(std::move(model)), server_(std::make_unique<httplib::Server>()) {
  server_->set_payload_max_length(kMaxRequestBytes);
  server_->Post("/v1/eps_hat", [this](const httplib::Request& req, httplib::Response& res) {
    auto fail = [&res](int status, const std::string& msg) {
      res.status = status;
      res.set_content(json{{"error", msg}}.dump(), "application/json");
    };
    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::parse_error& e) {
      return fail(400, std::string("malformed JSON: ") + e.what());
    }
    for (const char* key : {"x", "sigma", "conditioning", "cfg_scale"}) {
      if (!body.is_object() || !body.contains(key)) {
        return fail(400, std::string("missing field '") + key + "'");
      }
    }
    if (!body["sigma"].is_number() || !body["cfg_scale"].is_number() || !body["conditioning"].is_string()) {
      return fail(400, "fields 'sigma', 'cfg_scale' must be numbers and 'conditioning' a string");
    }
    try {
      const auto xs = from_json_batch(body["x"], "x");
      for (const auto& x : xs) {
        if (x.size() != model_->dim()) {
          return fail(400, "each row of 'x' must have length " + std::to_string(model_->dim()));
        }
      }
      std::string label = body["conditioning"].get<std::string>();
      Conditioning cond;
      if (const auto bar = label.find('|'); bar != std::string::npos) {
        cond.view_tag = label.substr(bar + 1);
        label.resize(bar);
      }
      cond.label = label;
      const auto eps =
          model_->eps_hat_batch(xs, body["sigma"].get<double>(), cond, body["cfg_scale"].get<double>());
      res.set_content(json{{"eps_hat", to_json_batch(eps)}}.dump(), "application/json");
    } catch (const Error& e) {
      return fail(400, e.what());
    }
  });

  if (port == 0) {
    port_ = server_->bind_to_any_port("127.0.0.1");
  } else if (server_->bind_to_port("127.0.0.1", port)) {
    port_ = port;
  } else {
    port_ = -1;
  }
  if (port_ < 0) {
    throw TransportError("127.0.0.1:" + std::to_string(port), "could not bind stub score server");
  }
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  spdlog::debug("stub score server listening on {}", endpoint());
}

StubScoreServer::~StubScoreServer() {
  stop();
  if (thread_.joinable()) {
    thread_.join();
  }
}

std::string StubScoreServer::endpoint() const {
  return "http://127.0.0.1:" + std::to_string(port_);
}

void StubScoreServer::wait() {
  if (thread_.joinable()) {
    thread_.join();
  }
}

void StubScoreServer::stop() {
  if (server_) {
    server_->stop();
  }
}

}  // namespace dflow
