#pragma once

#include <string>
#include <vector>

#include "tenet/geometry.hpp"
#include "tenet/io.hpp"

namespace tenet::segment {

struct SegmentRequest {
  std::string video_id;
  int frame_index = 1;
  int width = 0;
  int height = 0;
  Box prompt_box;
};

// Pixels whose centres fall inside the box (half-open on the far edges).
io::MaskRaster rasterize_box(const Box& box, int width, int height);

// Filled rectangle of the clamped prompt box. A box with nothing inside
// the frame yields an empty mask and a warning.
io::MaskRaster mock_segment(const SegmentRequest& req, io::Warnings* warnings = nullptr);

struct ClientConfig {
  std::string endpoint;          // e.g. http://127.0.0.1:8080
  double timeout_seconds = 30.0;  // per attempt
  int retries = 3;
  double backoff_seconds = 0.05;  // doubled after every failed attempt
};

// Client for an external promptable-segmentation service. POST /segment
// with {schema, request_id, video, frame, width, height, box, image}; the
// response is a mask record {schema, video, frame, width, height, rle}
// echoing request_id.
//
// Timeouts and 5xx responses are retried; 4xx responses raise
// ServiceError, malformed responses ProtocolError. The whole call never
// takes longer than (retries + 1) * timeout_seconds.
class SegmentClient {
public:
  explicit SegmentClient(ClientConfig config);

  io::MaskRaster segment(const SegmentRequest& req) const;

  // Runs requests with at most `max_in_flight` concurrent calls; results
  // are returned in request order.
  std::vector<io::MaskRaster> segment_all(const std::vector<SegmentRequest>& reqs,
                                          int max_in_flight) const;

  const ClientConfig& config() const { return config_; }

private:
  ClientConfig config_;
};

io::MaskRaster remote_segment(const ClientConfig& config, const SegmentRequest& req);

}  // namespace tenet::segment
