#include "avsim/pca.hpp"

#include "binio.hpp"
#include "layout_io.hpp"

#include <Eigen/QR>
#include <Eigen/SVD>

#include <cmath>

namespace avsim::pca {

namespace {

constexpr double kRankTolerance = 1e-10;

// Largest-magnitude entry positive; the first one wins ties.
void fix_signs(Eigen::MatrixXd& B) {
  for (Eigen::Index c = 0; c < B.cols(); ++c) {
    Eigen::Index arg = 0;
    B.col(c).cwiseAbs().maxCoeff(&arg);
    if (B(arg, c) < 0.0) B.col(c) *= -1.0;
  }
}

}  // namespace

PcaBasis PcaBasis::truncated(int m) const {
  if (m < 0 || m > M()) fail(ErrorCode::InvalidArgument, "truncation beyond basis size");
  PcaBasis out = *this;
  out.components = components.leftCols(m);
  out.singular_values = singular_values.head(m);
  return out;
}

Eigen::VectorXd flatten(const posmap::PositionMapAtlas& atlas) {
  const auto fg = atlas.foreground_indices();
  Eigen::VectorXd x(3 * static_cast<Eigen::Index>(fg.size()));
  for (std::size_t k = 0; k < fg.size(); ++k) x.segment<3>(3 * k) = atlas.values[fg[k]];
  return x;
}

void check_support(const PcaBasis& basis, const posmap::PositionMapAtlas& atlas) {
  if (atlas.width != basis.width || atlas.height != basis.height || !(atlas.layout == basis.layout)) {
    fail(ErrorCode::MaskMismatch, "atlas shape differs from basis");
  }
  std::size_t k = 0;
  for (std::size_t i = 0; i < atlas.mask.size(); ++i) {
    if (!atlas.mask[i]) continue;
    if (k >= basis.foreground_index.size() || basis.foreground_index[k] != i) {
      fail(ErrorCode::MaskMismatch, "atlas foreground differs from basis support");
    }
    ++k;
  }
  if (k != basis.foreground_index.size()) {
    fail(ErrorCode::MaskMismatch, "atlas foreground differs from basis support");
  }
}

PcaBasis fit(std::span<const posmap::PositionMapAtlas> samples, int M) {
  if (samples.size() < 2) fail(ErrorCode::InvalidArgument, "PCA needs at least 2 samples");
  const auto& first = samples.front();
  for (const auto& s : samples) {
    if (!s.same_support(first)) fail(ErrorCode::MaskMismatch, "PCA samples have different masks");
  }

  PcaBasis basis;
  basis.width = first.width;
  basis.height = first.height;
  basis.layout = first.layout;
  basis.foreground_index = first.foreground_indices();

  const auto F = static_cast<Eigen::Index>(samples.size());
  const auto D = 3 * static_cast<Eigen::Index>(basis.foreground_index.size());
  const Eigen::Index max_m = std::min<Eigen::Index>(D, F - 1);
  if (M < 1 || M > max_m) {
    fail(ErrorCode::InvalidArgument,
         "M = " + std::to_string(M) + " outside [1, " + std::to_string(max_m) + "]");
  }

  Eigen::MatrixXd X(F, D);
  for (Eigen::Index j = 0; j < F; ++j) X.row(j) = flatten(samples[j]).transpose();
  basis.mean = X.colwise().mean().transpose();
  X.rowwise() -= basis.mean.transpose();

  Eigen::BDCSVD<Eigen::MatrixXd> svd(X, Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  const double smax = sv.size() > 0 ? sv(0) : 0.0;
  Eigen::Index keep = 0;
  while (keep < M && keep < sv.size() && smax > 0.0 && sv(keep) > kRankTolerance * smax) ++keep;

  basis.components = svd.matrixV().leftCols(keep);
  basis.singular_values = sv.head(keep);
  fix_signs(basis.components);
  return basis;
}

Eigen::VectorXd project(const PcaBasis& basis, const posmap::PositionMapAtlas& atlas) {
  check_support(basis, atlas);
  return basis.components.transpose() * (flatten(atlas) - basis.mean);
}

Eigen::VectorXd reconstruct_flat(const PcaBasis& basis, const Eigen::VectorXd& w) {
  if (w.size() != basis.M()) {
    fail(ErrorCode::ShapeMismatch, "coefficient length " + std::to_string(w.size()) +
                                       " != M = " + std::to_string(basis.M()));
  }
  return basis.components * w + basis.mean;
}

Reconstruction reconstruct(const PcaBasis& basis, const Eigen::VectorXd& w) {
  const Eigen::VectorXd x = reconstruct_flat(basis, w);
  Reconstruction out{posmap::PositionMapAtlas(basis.width, basis.height, basis.layout), 0};
  for (std::size_t k = 0; k < basis.foreground_index.size(); ++k) {
    Vec3 v = x.segment<3>(3 * k);
    for (int c = 0; c < 3; ++c) {
      if (v[c] < 0.0 || v[c] > 1.0) {
        v[c] = std::clamp(v[c], 0.0, 1.0);
        ++out.clamped;
      }
    }
    const auto idx = basis.foreground_index[k];
    out.atlas.values[idx] = v;
    out.atlas.mask[idx] = 1;
  }
  return out;
}

double reconstruction_error(const PcaBasis& basis, const posmap::PositionMapAtlas& atlas) {
  const Eigen::VectorXd x = flatten(atlas);
  check_support(basis, atlas);
  const Eigen::VectorXd w = basis.components.transpose() * (x - basis.mean);
  return (x - reconstruct_flat(basis, w)).norm();
}

Reconstruction align(const PcaBasis& basis, const posmap::PositionMapAtlas& atlas) {
  return reconstruct(basis, project(basis, atlas));
}

// ---- PMPC ----

std::vector<std::uint8_t> encode_basis(const PcaBasis& basis) {
  binio::Writer out;
  out.magic("PMPC");
  out.u32(static_cast<std::uint32_t>(basis.foreground_index.size()));
  out.u32(static_cast<std::uint32_t>(basis.M()));
  for (auto i : basis.foreground_index) out.u32(i);
  for (Eigen::Index i = 0; i < basis.mean.size(); ++i) out.f32(static_cast<float>(basis.mean(i)));
  for (Eigen::Index c = 0; c < basis.components.cols(); ++c) {
    for (Eigen::Index r = 0; r < basis.components.rows(); ++r) {
      out.f32(static_cast<float>(basis.components(r, c)));
    }
  }
  // Trailer: atlas shape and singular values.
  out.u32(static_cast<std::uint32_t>(basis.width));
  out.u32(static_cast<std::uint32_t>(basis.height));
  posmap::io::write_layout(out, basis.layout);
  for (Eigen::Index i = 0; i < basis.singular_values.size(); ++i) {
    out.f32(static_cast<float>(basis.singular_values(i)));
  }
  return std::move(out.data());
}

PcaBasis decode_basis(std::span<const std::uint8_t> bytes) {
  binio::Reader in(bytes, "PMPC");
  in.expect_magic("PMPC");
  const std::uint32_t N = in.u32(), M = in.u32();
  const std::size_t D = 3 * std::size_t{N};
  in.need(std::size_t{N} * 4 + D * 4 + D * std::size_t{M} * 4);

  PcaBasis basis;
  basis.foreground_index.resize(N);
  for (auto& i : basis.foreground_index) i = in.u32();
  for (std::size_t k = 1; k < N; ++k) {
    if (basis.foreground_index[k] <= basis.foreground_index[k - 1]) {
      fail(ErrorCode::MalformedFile, "PMPC: foreground index not ascending");
    }
  }
  basis.mean.resize(static_cast<Eigen::Index>(D));
  for (Eigen::Index i = 0; i < basis.mean.size(); ++i) basis.mean(i) = in.f32();
  Eigen::MatrixXd stored(static_cast<Eigen::Index>(D), static_cast<Eigen::Index>(M));
  for (Eigen::Index c = 0; c < stored.cols(); ++c) {
    for (Eigen::Index r = 0; r < stored.rows(); ++r) stored(r, c) = in.f32();
  }
  basis.width = static_cast<int>(in.u32());
  basis.height = static_cast<int>(in.u32());
  basis.layout = posmap::io::read_layout(in);
  basis.singular_values.resize(M);
  for (Eigen::Index i = 0; i < basis.singular_values.size(); ++i) basis.singular_values(i) = in.f32();
  in.expect_end();

  try {
    basis.layout.validate(basis.width, basis.height);
  } catch (const Error& e) {
    fail(ErrorCode::MalformedFile, std::string("PMPC: ") + e.what());
  }
  if (N > 0 && basis.foreground_index.back() >=
                   static_cast<std::size_t>(basis.width) * static_cast<std::size_t>(basis.height)) {
    fail(ErrorCode::MalformedFile, "PMPC: foreground index outside atlas");
  }

  // float32 storage loses orthonormality at ~1e-7; restore it.
  if (M > 0) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(stored);
    Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(stored.rows(), stored.cols());
    for (Eigen::Index c = 0; c < Q.cols(); ++c) {
      if (Q.col(c).dot(stored.col(c)) < 0.0) Q.col(c) *= -1.0;
    }
    basis.components = std::move(Q);
  } else {
    basis.components.resize(static_cast<Eigen::Index>(D), 0);
  }
  return basis;
}

void write_basis(const PcaBasis& basis, const std::string& path) {
  binio::write_file(path, encode_basis(basis));
}

PcaBasis read_basis(const std::string& path) { return decode_basis(binio::read_file(path)); }

}  // namespace avsim::pca
