#include "tenet/segment.hpp"

#include <httplib.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <iostream>
#include <thread>

#include "tenet/errors.hpp"
#include "tenet/record_json.hpp"

namespace tenet::segment {

io::MaskRaster rasterize_box(const Box& box, int width, int height) {
  io::MaskRaster m(width, height);
  const Corners c = box.corners();
  const int x_begin = std::max(0, static_cast<int>(std::ceil(c.x1 - 0.5)));
  const int y_begin = std::max(0, static_cast<int>(std::ceil(c.y1 - 0.5)));
  for (int y = y_begin; y < height && y + 0.5 < c.y2; ++y) {
    for (int x = x_begin; x < width && x + 0.5 < c.x2; ++x) m.set(x, y, true);
  }
  return m;
}

io::MaskRaster mock_segment(const SegmentRequest& req, io::Warnings* warnings) {
  if (req.width < 1 || req.height < 1) throw ValidationError("frame size must be positive");
  try {
    const Box clamped = clamp_to_frame(req.prompt_box, req.width, req.height);
    return rasterize_box(clamped, req.width, req.height);
  } catch (const DegenerateBoxError&) {
    const std::string msg = "prompt box for " + req.video_id + "#" +
                            std::to_string(req.frame_index) + " lies outside the frame";
    if (warnings) {
      warnings->push_back(msg);
    } else {
      std::cerr << "warning: " << msg << '\n';
    }
    return io::MaskRaster(req.width, req.height);
  }
}

SegmentClient::SegmentClient(ClientConfig config) : config_(std::move(config)) {
  if (config_.endpoint.empty()) throw ConfigError("segmentation endpoint is empty");
  if (!(config_.timeout_seconds > 0.0)) throw ConfigError("timeout must be positive");
  if (config_.retries < 0) throw ConfigError("retries must be non-negative");
}

namespace {

using Clock = std::chrono::steady_clock;

std::string request_id(const SegmentRequest& req) {
  return req.video_id + "/" + std::to_string(req.frame_index);
}

io::MaskRaster parse_response(const SegmentRequest& req, const std::string& body) {
  io::Json j;
  try {
    j = io::Json::parse(body);
  } catch (const io::Json::exception& e) {
    throw ProtocolError(std::string("response is not JSON: ") + e.what());
  }
  if (j.contains("request_id") && j.at("request_id") != request_id(req)) {
    throw ProtocolError("response request_id does not match the request");
  }
  io::MaskRecord rec;
  try {
    rec = io::mask_from_json(j);
  } catch (const Error& e) {
    throw ProtocolError(std::string("malformed mask in response: ") + e.what());
  }
  if (rec.mask.width() != req.width || rec.mask.height() != req.height) {
    throw ProtocolError("response mask size does not match the frame size");
  }
  return rec.mask;
}

}  // namespace

io::MaskRaster SegmentClient::segment(const SegmentRequest& req) const {
  io::Json body;
  body["schema"] = io::kSchemaVersion;
  body["request_id"] = request_id(req);
  body["video"] = req.video_id;
  body["frame"] = req.frame_index;
  body["width"] = req.width;
  body["height"] = req.height;
  body["box"] = io::box_to_json(req.prompt_box);
  body["image"] = req.video_id + "/" + std::to_string(req.frame_index);
  const std::string payload = body.dump();

  const auto budget = std::chrono::duration<double>(config_.timeout_seconds * (config_.retries + 1));
  const auto deadline = Clock::now() + std::chrono::duration_cast<Clock::duration>(budget);
  double backoff = config_.backoff_seconds;
  std::string last_error = "no attempt made";
  int last_status = 0;

  for (int attempt = 0; attempt <= config_.retries; ++attempt) {
    const double remaining = std::chrono::duration<double>(deadline - Clock::now()).count();
    if (remaining <= 0.0) break;
    const double attempt_budget = std::min(config_.timeout_seconds, remaining);
    auto to_duration = [](double s) {
      return std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::duration<double>(s));
    };

    httplib::Client client(config_.endpoint);
    client.set_connection_timeout(to_duration(attempt_budget / 4));
    client.set_write_timeout(to_duration(attempt_budget / 4));
    client.set_read_timeout(to_duration(attempt_budget / 2));
    auto res = client.Post("/segment", payload, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      last_status = 0;
    } else if (res->status >= 200 && res->status < 300) {
      return parse_response(req, res->body);
    } else if (res->status >= 500) {
      last_error = "service returned status " + std::to_string(res->status);
      last_status = res->status;
    } else {
      throw ServiceError(res->status, "service rejected request " + request_id(req) +
                                          " with status " + std::to_string(res->status));
    }

    if (attempt == config_.retries) break;
    const double left = std::chrono::duration<double>(deadline - Clock::now()).count();
    const double pause = std::min(backoff, std::max(0.0, left));
    std::this_thread::sleep_for(std::chrono::duration<double>(pause));
    backoff *= 2.0;
  }
  if (last_status != 0) {
    throw ServiceError(last_status, "segmentation of " + request_id(req) + " failed: " + last_error);
  }
  throw RetryableError("segmentation of " + request_id(req) + " failed: " + last_error);
}

std::vector<io::MaskRaster> SegmentClient::segment_all(const std::vector<SegmentRequest>& reqs,
                                                       int max_in_flight) const {
  std::vector<io::MaskRaster> out(reqs.size());
  std::vector<std::exception_ptr> errors(reqs.size());
  std::atomic<std::size_t> next{0};
  const int workers = std::max(1, std::min<int>(max_in_flight, static_cast<int>(reqs.size())));
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < reqs.size(); i = next++) {
        try {
          out[i] = segment(reqs[i]);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

io::MaskRaster remote_segment(const ClientConfig& config, const SegmentRequest& req) {
  return SegmentClient(config).segment(req);
}

}  // namespace tenet::segment
