#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace mie {

// All library failures carry a short machine-parseable class tag alongside the
// human message. The CLI prints "error[<cls>]: <msg>" and maps cls to its exit
// status; tests match on cls.
class Error : public std::runtime_error {
 public:
  Error(std::string cls, const std::string& msg)
      : std::runtime_error(cls + ": " + msg), cls_(std::move(cls)) {}

  const std::string& cls() const noexcept { return cls_; }

 private:
  std::string cls_;
};

inline Error validation_error(const std::string& msg) { return Error("validation", msg); }
inline Error domain_error(const std::string& msg) { return Error("domain", msg); }
inline Error kink_error(const std::string& msg) { return Error("kink", msg); }
inline Error rank_error(const std::string& msg) { return Error("rank-deficient", msg); }
inline Error separation_error(const std::string& msg) { return Error("separation", msg); }
inline Error convergence_error(const std::string& msg) { return Error("non-convergence", msg); }
inline Error degenerate_error(const std::string& msg) { return Error("degenerate", msg); }
inline Error support_error(const std::string& msg) { return Error("support", msg); }
inline Error sample_error(const std::string& msg) { return Error("effective-sample", msg); }
inline Error parse_error(const std::string& msg) { return Error("parse", msg); }
inline Error config_error(const std::string& msg) { return Error("config", msg); }
inline Error io_error(const std::string& msg) { return Error("io", msg); }
inline Error network_error(const std::string& msg) { return Error("network", msg); }
inline Error digest_error(const std::string& msg) { return Error("digest", msg); }

}  // namespace mie
