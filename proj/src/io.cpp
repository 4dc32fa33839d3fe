#include "otkd/io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "otkd/error.hpp"

namespace otkd {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& where, const std::string& what) {
  throw Error(ErrorCode::parse_error, where + ": " + what);
}

double get_number(const json& j, const std::string& where) {
  if (!j.is_number()) fail(where, "expected a number");
  return j.get<double>();
}

int get_int(const json& j, const std::string& where) {
  if (!j.is_number_integer()) fail(where, "expected an integer");
  return j.get<int>();
}

const json& get_field(const json& j, const char* key, const std::string& where) {
  const auto it = j.find(key);
  if (it == j.end()) fail(where, std::string("missing field '") + key + "'");
  return *it;
}

std::array<int, 2> get_int_pair(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 2) fail(where, "expected a [w, h] pair");
  return {get_int(j[0], where + "[0]"), get_int(j[1], where + "[1]")};
}

KeypointPredictionSet parse_keypoints(const json& doc) {
  KeypointPredictionSet set;
  set.image_size = get_int_pair(get_field(doc, "image_size", "$"), "image_size");
  set.num_keypoints = get_int(get_field(doc, "num_keypoints", "$"), "num_keypoints");
  const json& cells = get_field(doc, "cells", "$");
  if (!cells.is_array()) fail("cells", "expected an array");
  set.cells.reserve(cells.size());
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const std::string where = "cells[" + std::to_string(i) + "]";
    const json& jc = cells[i];
    if (!jc.is_object()) fail(where, "expected an object");
    KeypointCell cell;
    const json& xy = get_field(jc, "cell_xy", where);
    if (!xy.is_array() || xy.size() != 2) fail(where + ".cell_xy", "expected [x, y]");
    cell.cell_xy = {get_int(xy[0], where + ".cell_xy[0]"), get_int(xy[1], where + ".cell_xy[1]")};
    cell.score = get_number(get_field(jc, "score", where), where + ".score");
    const json& votes = get_field(jc, "votes", where);
    if (!votes.is_array()) fail(where + ".votes", "expected an array");
    for (std::size_t k = 0; k < votes.size(); ++k) {
      const std::string vw = where + ".votes[" + std::to_string(k) + "]";
      if (!votes[k].is_array() || votes[k].size() != 2) fail(vw, "expected [u, v]");
      cell.votes.push_back({get_number(votes[k][0], vw + "[0]"), get_number(votes[k][1], vw + "[1]")});
    }
    set.cells.push_back(std::move(cell));
  }
  try {
    validate(set);
  } catch (const Error& e) {
    fail("$", e.what());
  }
  return set;
}

DenseCodePredictionSet parse_dense(const json& doc) {
  DenseCodePredictionSet set;
  set.grid_size = get_int_pair(get_field(doc, "grid_size", "$"), "grid_size");
  set.code_dim = get_int(get_field(doc, "code_dim", "$"), "code_dim");
  const json& cells = get_field(doc, "cells", "$");
  if (!cells.is_array()) fail("cells", "expected an array");
  set.cells.reserve(cells.size());
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const std::string where = "cells[" + std::to_string(i) + "]";
    const json& jc = cells[i];
    if (!jc.is_object()) fail(where, "expected an object");
    DenseCell cell;
    cell.score = get_number(get_field(jc, "score", where), where + ".score");
    const json& code = get_field(jc, "code", where);
    if (!code.is_array()) fail(where + ".code", "expected an array");
    for (std::size_t c = 0; c < code.size(); ++c)
      cell.code.push_back(get_number(code[c], where + ".code[" + std::to_string(c) + "]"));
    set.cells.push_back(std::move(cell));
  }
  try {
    validate(set);
  } catch (const Error& e) {
    fail("$", e.what());
  }
  return set;
}

}  // namespace

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

PredictionFile parse_prediction_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::parse_error, e.what());
  }
  if (!doc.is_object()) fail("$", "expected a JSON object");
  const json& kind = get_field(doc, "kind", "$");
  if (!kind.is_string()) fail("kind", "expected a string");
  const std::string k = kind.get<std::string>();
  if (k == "keypoints") return parse_keypoints(doc);
  if (k == "dense_codes") return parse_dense(doc);
  fail("kind", "expected 'keypoints' or 'dense_codes', got '" + k + "'");
}

PredictionFile load_prediction_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io_error, "cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_prediction_json(buf.str());
}

std::string prediction_to_json(const PredictionFile& file) {
  std::string out;
  if (is_keypoints(file)) {
    const auto& set = std::get<KeypointPredictionSet>(file);
    out += "{\n  \"kind\": \"keypoints\",\n";
    out += "  \"image_size\": [" + std::to_string(set.image_size[0]) + ", " +
           std::to_string(set.image_size[1]) + "],\n";
    out += "  \"num_keypoints\": " + std::to_string(set.num_keypoints) + ",\n";
    out += "  \"cells\": [";
    for (std::size_t i = 0; i < set.cells.size(); ++i) {
      const auto& c = set.cells[i];
      out += (i == 0) ? "\n" : ",\n";
      out += "    {\"cell_xy\": [" + std::to_string(c.cell_xy[0]) + ", " +
             std::to_string(c.cell_xy[1]) + "], \"score\": " + format_double(c.score) +
             ", \"votes\": [";
      for (std::size_t k = 0; k < c.votes.size(); ++k) {
        if (k > 0) out += ", ";
        out += "[" + format_double(c.votes[k][0]) + ", " + format_double(c.votes[k][1]) + "]";
      }
      out += "]}";
    }
    out += "\n  ]\n}\n";
  } else {
    const auto& set = std::get<DenseCodePredictionSet>(file);
    out += "{\n  \"kind\": \"dense_codes\",\n";
    out += "  \"grid_size\": [" + std::to_string(set.grid_size[0]) + ", " +
           std::to_string(set.grid_size[1]) + "],\n";
    out += "  \"code_dim\": " + std::to_string(set.code_dim) + ",\n";
    out += "  \"cells\": [";
    for (std::size_t i = 0; i < set.cells.size(); ++i) {
      const auto& c = set.cells[i];
      out += (i == 0) ? "\n" : ",\n";
      out += "    {\"score\": " + format_double(c.score) + ", \"code\": [";
      for (std::size_t b = 0; b < c.code.size(); ++b) {
        if (b > 0) out += ", ";
        out += format_double(c.code[b]);
      }
      out += "]}";
    }
    out += "\n  ]\n}\n";
  }
  return out;
}

void save_prediction_file(const PredictionFile& file, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::io_error, "cannot write '" + path + "'");
  out << prediction_to_json(file);
  if (!out) throw Error(ErrorCode::io_error, "write failed for '" + path + "'");
}

bool is_keypoints(const PredictionFile& file) {
  return std::holds_alternative<KeypointPredictionSet>(file);
}

}  // namespace otkd
