#pragma once

#include <stdexcept>
#include <string>

namespace otpel {

// Error codes kept distinct so callers and tests can react to the exact
// failure class instead of parsing messages.
enum class Err {
    shape,             // tensor dimension mismatch
    config,            // invalid configuration value
    contract,          // API precondition violated
    vocab,             // token id outside the vocabulary
    no_match,          // freeze/unfreeze prefix matched nothing
    training,          // divergence (non-finite loss)
    usage,             // bad CLI invocation
    missing_artifact,  // required file produced by another command is absent
    io,                // filesystem failure
    file_magic,        // wrong leading magic bytes
    file_version,      // unsupported container version
    file_config_hash,  // file was produced under a different configuration
    file_truncated,    // short read or checksum failure, no partial load
};

class Error : public std::runtime_error {
public:
    Error(Err code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
    Err code() const { return code_; }

private:
    Err code_;
};

[[noreturn]] inline void fail(Err code, const std::string& msg) { throw Error(code, msg); }

} // namespace otpel
