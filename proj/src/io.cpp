#include "lidarlabel/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace lidarlabel {

using nlohmann::json;

namespace {

class ByteWriter {
 public:
  void magic(const char (&m)[5]) { out_.insert(out_.end(), m, m + 4); }
  void u32(std::uint32_t v) { put(v); }
  void i32(std::int32_t v) { put(std::bit_cast<std::uint32_t>(v)); }
  void f32(float v) { put(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.insert(out_.end(), s.begin(), s.end());
  }
  template <typename M>
  void matrix(const M& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) f64(m(r, c));
    }
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  template <typename U>
  void put(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> in) : in_(in) {}
  void magic(const char (&m)[5]) {
    need(4);
    if (std::memcmp(in_.data() + pos_, m, 4) != 0) throw InputError(std::string("bad magic, expected ") + m);
    pos_ += 4;
  }
  std::uint32_t u32() { return get<std::uint32_t>(); }
  std::int32_t i32() { return std::bit_cast<std::int32_t>(get<std::uint32_t>()); }
  float f32() { return std::bit_cast<float>(get<std::uint32_t>()); }
  double f64() { return std::bit_cast<double>(get<std::uint64_t>()); }
  std::string str() {
    const auto n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  template <typename M>
  void matrix(M& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = f64();
    }
  }
  // Guards count-driven allocations against truncated input.
  void expect_remaining(std::size_t n) const {
    if (in_.size() - pos_ < n) throw InputError("truncated payload");
  }
  void finish() const {
    if (pos_ != in_.size()) throw InputError("trailing bytes after payload");
  }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw InputError("unexpected end of data");
  }
  template <typename U>
  U get() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(in_[pos_ + i]) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_frame(const Frame& f) {
  ByteWriter w;
  w.magic("ALF1");
  w.u32(static_cast<std::uint32_t>(f.points.size()));
  w.u32(static_cast<std::uint32_t>(f.cameras.size()));
  w.str(f.frame_id);
  w.f64(f.timestamp);
  for (const auto& p : f.points) {
    w.f32(p.x);
    w.f32(p.y);
    w.f32(p.z);
    w.f32(p.intensity);
  }
  w.matrix(f.ego_pose);
  for (const auto& cam : f.cameras) {
    w.str(cam.view_id);
    w.matrix(cam.K);
    w.matrix(cam.T);
    w.u32(cam.width);
    w.u32(cam.height);
  }
  return w.take();
}

Frame decode_frame(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.magic("ALF1");
  Frame f;
  const auto n_points = r.u32();
  const auto n_cams = r.u32();
  f.frame_id = r.str();
  f.timestamp = r.f64();
  r.expect_remaining(static_cast<std::size_t>(n_points) * 16);
  f.points.resize(n_points);
  for (auto& p : f.points) {
    p.x = r.f32();
    p.y = r.f32();
    p.z = r.f32();
    p.intensity = r.f32();
  }
  r.matrix(f.ego_pose);
  r.expect_remaining(static_cast<std::size_t>(n_cams) * (4 + 25 * 8 + 8));
  f.cameras.resize(n_cams);
  for (auto& cam : f.cameras) {
    cam.view_id = r.str();
    r.matrix(cam.K);
    r.matrix(cam.T);
    cam.width = r.u32();
    cam.height = r.u32();
  }
  r.finish();
  return f;
}

std::vector<std::uint8_t> encode_labels(const PointLabels& l) {
  if (auto v = validate_labels(l); !v.empty() && v.front() == "label arrays differ in length") {
    throw InvariantError("encode_labels: " + v.front());
  }
  ByteWriter w;
  w.magic("ALL1");
  w.u32(static_cast<std::uint32_t>(l.size()));
  w.u32(l.num_classes);
  for (const auto v : l.instance_id) w.i32(v);
  for (const auto v : l.class_id) w.i32(v);
  for (const auto v : l.confidence) w.f32(v);
  for (const auto v : l.distribution) w.f32(v);
  return w.take();
}

PointLabels decode_labels(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.magic("ALL1");
  const auto n = r.u32();
  const auto c = r.u32();
  r.expect_remaining(static_cast<std::size_t>(n) * (12 + 4 * static_cast<std::size_t>(c)));
  PointLabels l(n, c);
  for (auto& v : l.instance_id) v = r.i32();
  for (auto& v : l.class_id) v = r.i32();
  for (auto& v : l.confidence) v = r.f32();
  for (auto& v : l.distribution) v = r.f32();
  r.finish();
  return l;
}

std::vector<std::uint8_t> encode_scores(const ScoreMatrix& s) {
  ByteWriter w;
  w.magic("ALS1");
  w.u32(static_cast<std::uint32_t>(s.rows()));
  w.u32(static_cast<std::uint32_t>(s.cols()));
  for (Eigen::Index i = 0; i < s.size(); ++i) w.f32(static_cast<float>(s.data()[i]));
  return w.take();
}

ScoreMatrix decode_scores(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.magic("ALS1");
  const auto n = r.u32();
  const auto c = r.u32();
  r.expect_remaining(static_cast<std::size_t>(n) * c * 4);
  ScoreMatrix s(n, c);
  for (Eigen::Index i = 0; i < s.size(); ++i) s.data()[i] = r.f32();
  r.finish();
  return s;
}

void to_json(json& j, const DetectionRecord& d) {
  j = json{{"view_id", d.view_id},
           {"box", {{"u_min", d.box.u_min}, {"v_min", d.box.v_min}, {"u_max", d.box.u_max}, {"v_max", d.box.v_max}}},
           {"prompt_scores", d.prompt_scores},
           {"class_distribution", d.class_distribution},
           {"confidence", d.confidence},
           {"mask", {{"width", d.mask.width}, {"height", d.mask.height}, {"runs", d.mask.runs}}}};
  if (d.embedding) j["embedding"] = *d.embedding;
}

void from_json(const json& j, DetectionRecord& d) {
  j.at("view_id").get_to(d.view_id);
  const auto& b = j.at("box");
  b.at("u_min").get_to(d.box.u_min);
  b.at("v_min").get_to(d.box.v_min);
  b.at("u_max").get_to(d.box.u_max);
  b.at("v_max").get_to(d.box.v_max);
  j.at("prompt_scores").get_to(d.prompt_scores);
  j.at("class_distribution").get_to(d.class_distribution);
  j.at("confidence").get_to(d.confidence);
  const auto& m = j.at("mask");
  m.at("width").get_to(d.mask.width);
  m.at("height").get_to(d.mask.height);
  m.at("runs").get_to(d.mask.runs);
  if (j.contains("embedding") && !j.at("embedding").is_null()) {
    d.embedding = j.at("embedding").get<std::vector<double>>();
  } else {
    d.embedding.reset();
  }
}

std::string encode_detections(const std::vector<DetectionRecord>& dets) {
  return json(dets).dump(1) + "\n";
}

std::vector<DetectionRecord> decode_detections(const std::string& text) {
  try {
    const auto j = json::parse(text);
    if (!j.is_array()) throw InputError("detection file must hold a JSON array");
    return j.get<std::vector<DetectionRecord>>();
  } catch (const json::exception& e) {
    throw InputError(e.what());
  }
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw InputError("write failed for " + path.string());
}

namespace {

template <typename F>
auto with_path(const std::filesystem::path& path, F&& f) {
  try {
    return f();
  } catch (const InputError& e) {
    const std::string msg = e.what();
    if (msg.find(path.string()) != std::string::npos) throw;
    throw InputError(path.string() + ": " + msg);
  }
}

}  // namespace

Frame read_frame(const std::filesystem::path& path) {
  return with_path(path, [&] { return decode_frame(read_bytes(path)); });
}
void write_frame(const std::filesystem::path& path, const Frame& frame) { write_bytes(path, encode_frame(frame)); }

PointLabels read_labels(const std::filesystem::path& path) {
  return with_path(path, [&] { return decode_labels(read_bytes(path)); });
}
void write_labels(const std::filesystem::path& path, const PointLabels& labels) {
  write_bytes(path, encode_labels(labels));
}

ScoreMatrix read_scores(const std::filesystem::path& path) {
  return with_path(path, [&] { return decode_scores(read_bytes(path)); });
}
void write_scores(const std::filesystem::path& path, const ScoreMatrix& scores) {
  write_bytes(path, encode_scores(scores));
}

std::vector<DetectionRecord> read_detections(const std::filesystem::path& path) {
  return with_path(path, [&] {
    const auto bytes = read_bytes(path);
    return decode_detections(std::string(bytes.begin(), bytes.end()));
  });
}
void write_detections(const std::filesystem::path& path, const std::vector<DetectionRecord>& dets) {
  const auto text = encode_detections(dets);
  write_bytes(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

}  // namespace lidarlabel
