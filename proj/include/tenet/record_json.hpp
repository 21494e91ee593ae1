#pragma once

#include <json.hpp>

#include "tenet/io.hpp"

// JSON conversions shared by the file formats and the segmentation service
// wire format.
namespace tenet::io {

using Json = nlohmann::ordered_json;

Json box_to_json(const Box& b);
Box box_from_json(const Json& j);

Json mask_to_json(const MaskRecord& m);
// Throws ParseError on missing fields and LengthError when the RLE counts
// do not cover width*height pixels.
MaskRecord mask_from_json(const Json& j);

}  // namespace tenet::io
