#pragma once

#include <stdexcept>
#include <string>

namespace fuseg {

// Error classes map 1:1 onto CLI exit codes (see tools/).
enum class ErrorCode {
  kIo = 3,             // missing/unreadable/unwritable files
  kMalformedFile = 4,  // truncated or structurally invalid file content
  kNonVolumetric = 5,  // payload is not a single-channel 3D image
  kBadSpacing = 6,     // non-positive or non-finite voxel spacing
  kDataIntegrity = 7,  // violated data invariants (NaN, non-binary mask, shape mismatch)
  kInvalidArgument = 8,
  kInternal = 9,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& msg) { throw Error(code, msg); }

inline void require(bool ok, ErrorCode code, const std::string& msg) {
  if (!ok) fail(code, msg);
}

}  // namespace fuseg
