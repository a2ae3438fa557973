#pragma once

#include <stdexcept>
#include <string>

namespace kmle {

enum class errc {
  empty_input,
  mixed_dims,
  non_finite,
  order_too_large,
  rank_deficient,
  singular_sigma,
  degenerate_cluster,
  too_few_series,
  boundary_mle,
  out_of_support,
  length_mismatch,
  unstable,
  unachievable,
  invalid_argument,
  io_failure,
};

inline const char* errc_name(errc c) {
  switch (c) {
    case errc::empty_input: return "EmptyInput";
    case errc::mixed_dims: return "MixedDims";
    case errc::non_finite: return "NonFinite";
    case errc::order_too_large: return "OrderTooLarge";
    case errc::rank_deficient: return "RankDeficient";
    case errc::singular_sigma: return "SingularSigma";
    case errc::degenerate_cluster: return "DegenerateCluster";
    case errc::too_few_series: return "TooFewSeries";
    case errc::boundary_mle: return "BoundaryMLE";
    case errc::out_of_support: return "OutOfSupport";
    case errc::length_mismatch: return "LengthMismatch";
    case errc::unstable: return "Unstable";
    case errc::unachievable: return "Unachievable";
    case errc::invalid_argument: return "InvalidArgument";
    case errc::io_failure: return "IoFailure";
  }
  return "UnknownError";
}

class Error : public std::runtime_error {
 public:
  Error(errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  errc code() const noexcept { return code_; }

 private:
  errc code_;
};

[[noreturn]] inline void fail(errc code, const std::string& what) { throw Error(code, what); }

}  // namespace kmle
