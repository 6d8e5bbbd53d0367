#include "avsim/ingest.hpp"

#include "binio.hpp"

namespace avsim::ingest {

namespace {

constexpr std::string_view kMagic = "PMSQ";
constexpr std::uint32_t kVersion = 1;

ReferenceMesh read_reference_block(binio::Reader& in) {
  ReferenceMesh ref;
  const std::uint32_t nv = in.u32();
  const std::uint32_t nf = in.u32();
  const std::uint32_t nw = in.u32();
  in.need(std::size_t{nv} * 12 + std::size_t{nf} * 12 + std::size_t{nw} * 4);
  ref.vertices.resize(nv);
  for (auto& v : ref.vertices) {
    const float x = in.f32(), y = in.f32(), z = in.f32();
    v = Vec3(x, y, z);
  }
  ref.faces.resize(nf);
  for (auto& f : ref.faces) f = {in.u32(), in.u32(), in.u32()};
  ref.waist_vertex_ids.resize(nw);
  for (auto& w : ref.waist_vertex_ids) w = in.u32();
  ref.update_extent();
  return ref;
}

void write_reference_block(binio::Writer& out, const ReferenceMesh& ref) {
  out.u32(static_cast<std::uint32_t>(ref.vertices.size()));
  out.u32(static_cast<std::uint32_t>(ref.faces.size()));
  out.u32(static_cast<std::uint32_t>(ref.waist_vertex_ids.size()));
  for (const auto& v : ref.vertices) {
    out.f32(static_cast<float>(v.x()));
    out.f32(static_cast<float>(v.y()));
    out.f32(static_cast<float>(v.z()));
  }
  for (const auto& f : ref.faces) {
    out.u32(f[0]);
    out.u32(f[1]);
    out.u32(f[2]);
  }
  for (auto w : ref.waist_vertex_ids) out.u32(w);
}

MotionSequence decode(std::span<const std::uint8_t> bytes, const ReferenceMesh* expected) {
  binio::Reader in(bytes, "PMSQ");
  in.expect_magic(kMagic);
  const std::uint32_t version = in.u32();
  if (version != kVersion) {
    fail(ErrorCode::MalformedFile, "PMSQ: unsupported version " + std::to_string(version));
  }
  auto embedded = std::make_shared<ReferenceMesh>(read_reference_block(in));
  embedded->validate();

  std::shared_ptr<const ReferenceMesh> bound = embedded;
  if (expected != nullptr) {
    if (expected->vertex_count() != embedded->vertex_count()) {
      fail(ErrorCode::VertexCountMismatch,
           "file reference has " + std::to_string(embedded->vertex_count()) +
               " vertices, expected " + std::to_string(expected->vertex_count()));
    }
    bound = std::make_shared<ReferenceMesh>(*expected);
  }

  const std::uint32_t frame_count = in.u32();
  const std::size_t nv = bound->vertex_count();
  const std::size_t frame_bytes = 4 + 1 + 12 * nv;
  const std::size_t expected_bytes = std::size_t{frame_count} * frame_bytes;
  if (in.remaining() != expected_bytes) {
    // Frames carry no explicit vertex count; a payload that is off by whole
    // vertex triples means some frame has the wrong vertex count.
    const std::size_t diff = in.remaining() > expected_bytes ? in.remaining() - expected_bytes
                                                              : expected_bytes - in.remaining();
    if (diff % 12 == 0) {
      fail(ErrorCode::VertexCountMismatch,
           "frame payload is " + std::to_string(diff / 12) +
               " vertex triple(s) away from " + std::to_string(frame_count) + " frames of " +
               std::to_string(nv) + " vertices");
    }
    fail(ErrorCode::MalformedFile, "PMSQ: frame payload size " + std::to_string(in.remaining()) +
                                       " does not match " + std::to_string(expected_bytes));
  }

  MotionSequence seq;
  seq.reference = bound;
  seq.frames.resize(frame_count);
  for (auto& frame : seq.frames) {
    frame.frame_index = in.u32();
    frame.action = action_from_token(static_cast<char>(in.u8()));
    frame.posed_vertices.resize(nv);
    for (auto& v : frame.posed_vertices) {
      const float x = in.f32(), y = in.f32(), z = in.f32();
      v = Vec3(x, y, z);
    }
  }
  in.expect_end();
  validate_sequence(seq);
  return seq;
}

}  // namespace

void ReferenceMesh::update_extent() {
  if (vertices.empty()) {
    longest_axis_length = 0.0;
    return;
  }
  Vec3 lo = vertices.front(), hi = vertices.front();
  for (const auto& v : vertices) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  longest_axis_length = (hi - lo).maxCoeff();
}

void ReferenceMesh::validate() const {
  if (vertices.empty() || faces.empty()) fail(ErrorCode::DegenerateMesh, "empty reference mesh");
  if (!(longest_axis_length > 0.0)) fail(ErrorCode::DegenerateMesh, "zero-extent reference mesh");
  for (const auto& f : faces) {
    for (auto idx : f) {
      if (idx >= vertices.size()) {
        fail(ErrorCode::InvalidArgument, "face index " + std::to_string(idx) + " out of range");
      }
    }
  }
  if (waist_vertex_ids.empty()) fail(ErrorCode::InvalidArgument, "empty waist vertex set");
  for (auto w : waist_vertex_ids) {
    if (w >= vertices.size()) {
      fail(ErrorCode::InvalidArgument, "waist vertex " + std::to_string(w) + " out of range");
    }
  }
}

void validate_sequence(const MotionSequence& seq) {
  if (!seq.reference) fail(ErrorCode::InvalidArgument, "sequence without reference mesh");
  const std::size_t nv = seq.reference->vertex_count();
  for (std::size_t i = 0; i < seq.frames.size(); ++i) {
    const auto& frame = seq.frames[i];
    if (frame.posed_vertices.size() != nv) {
      fail(ErrorCode::VertexCountMismatch,
           "frame " + std::to_string(frame.frame_index) + " has " +
               std::to_string(frame.posed_vertices.size()) + " vertices, expected " +
               std::to_string(nv));
    }
    if (!is_valid_action(frame.action)) {
      fail(ErrorCode::UnknownAction, "frame " + std::to_string(frame.frame_index));
    }
    if (i > 0 && frame.frame_index != seq.frames[i - 1].frame_index + 1) {
      fail(ErrorCode::NonContiguousFrames,
           "frame " + std::to_string(frame.frame_index) + " follows " +
               std::to_string(seq.frames[i - 1].frame_index));
    }
  }
}

MotionSequence decode_motion_sequence(std::span<const std::uint8_t> bytes) {
  return decode(bytes, nullptr);
}

MotionSequence read_motion_sequence(const std::string& path) {
  const auto bytes = binio::read_file(path);
  return decode(bytes, nullptr);
}

MotionSequence load_motion_sequence(const std::string& path, const ReferenceMesh& reference) {
  const auto bytes = binio::read_file(path);
  return decode(bytes, &reference);
}

std::vector<std::uint8_t> encode_motion_sequence(const MotionSequence& seq) {
  validate_sequence(seq);
  binio::Writer out;
  out.magic(kMagic);
  out.u32(kVersion);
  write_reference_block(out, *seq.reference);
  out.u32(static_cast<std::uint32_t>(seq.frames.size()));
  for (const auto& frame : seq.frames) {
    out.u32(static_cast<std::uint32_t>(frame.frame_index));
    out.u8(static_cast<std::uint8_t>(action_token(frame.action)));
    for (const auto& v : frame.posed_vertices) {
      out.f32(static_cast<float>(v.x()));
      out.f32(static_cast<float>(v.y()));
      out.f32(static_cast<float>(v.z()));
    }
  }
  return std::move(out.data());
}

void save_motion_sequence(const MotionSequence& seq, const std::string& path) {
  binio::write_file(path, encode_motion_sequence(seq));
}

std::vector<GroupIndex> build_frame_groups(const MotionSequence& seq) {
  if (seq.size() < 4) {
    fail(ErrorCode::SequenceTooShort,
         "need at least 4 frames, got " + std::to_string(seq.size()));
  }
  std::vector<GroupIndex> groups;
  groups.reserve(seq.size() - 3);
  for (std::size_t start = 0; start + 3 < seq.size(); ++start) {
    groups.push_back({start, seq.frames[start + 2].action});
  }
  return groups;
}

double compute_global_scale(const ReferenceMesh& reference) {
  if (!(reference.longest_axis_length > 0.0) || !std::isfinite(reference.longest_axis_length)) {
    fail(ErrorCode::DegenerateMesh, "reference mesh has zero extent");
  }
  return kNormalizedLongestAxis / reference.longest_axis_length;
}

Vec3 waist_root(const ReferenceMesh& reference, const std::vector<Vec3>& posed) {
  if (reference.waist_vertex_ids.empty()) fail(ErrorCode::InvalidArgument, "empty waist set");
  Vec3 sum = Vec3::Zero();
  for (auto id : reference.waist_vertex_ids) {
    if (id >= posed.size()) fail(ErrorCode::InvalidArgument, "waist id out of range");
    sum += posed[id];
  }
  return sum / static_cast<double>(reference.waist_vertex_ids.size());
}

}  // namespace avsim::ingest
