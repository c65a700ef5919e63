#include "crossia/perception.hpp"

#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <thread>

#include "crossia/errors.hpp"

namespace crossia::perception {
namespace {

namespace fs = std::filesystem;

struct ScratchDir {
  fs::path path;
  ScratchDir() {
    static std::atomic<unsigned> counter{0};
    path = fs::temp_directory_path() /
           ("crossia-ext-" + std::to_string(::getpid()) + "-" + std::to_string(counter.fetch_add(1)));
    fs::create_directories(path);
  }
  ~ScratchDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

// fork/exec with a wall-clock timeout; returns the exit status or -1.
int run_with_timeout(const std::vector<std::string>& argv, std::chrono::milliseconds timeout) {
  std::vector<char*> args;
  for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
  args.push_back(nullptr);
  const pid_t pid = ::fork();
  if (pid < 0) return -1;
  if (pid == 0) {
    ::execvp(args[0], args.data());
    ::_exit(127);
  }
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  int status = 0;
  while (true) {
    const pid_t done = ::waitpid(pid, &status, WNOHANG);
    if (done == pid) break;
    if (done < 0) return -1;
    if (std::chrono::steady_clock::now() > deadline) {
      ::kill(pid, SIGKILL);
      ::waitpid(pid, &status, 0);
      return -1;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

ExternalClient::ExternalClient(ExternalBackend backend)
    : backend_(std::move(backend)), mutex_(std::make_shared<std::mutex>()) {
  require(!backend_.command.empty(), "external backend: empty command");
  require(backend_.retries >= 0, "external backend: retries must be >= 0");
}

fs::path ExternalClient::invoke(const RgbImage& input, const fs::path& workdir) const {
  const fs::path in = workdir / "input.png";
  const fs::path out = workdir / "output.png";
  const fs::path params = workdir / "params.json";
  write_png(in, input);
  std::ofstream(params) << backend_.params.dump();

  std::vector<std::string> argv = backend_.command;
  argv.insert(argv.end(), {"--input", in.string(), "--output", out.string(), "--params", params.string()});
  std::string last_error;
  for (int attempt = 0; attempt <= backend_.retries; ++attempt) {
    fs::remove(out);
    const int status = run_with_timeout(argv, backend_.timeout);
    if (status == 0 && fs::exists(out)) return out;
    last_error = status < 0 ? "timed out or could not be started" : "exited with status " + std::to_string(status);
  }
  fail(ErrorCode::kBackend, "external backend '" + backend_.command.front() + "' " + last_error + " after " +
                                std::to_string(backend_.retries + 1) + " attempt(s)");
}

RgbImage ExternalClient::run_rgb(const RgbImage& input) const {
  std::lock_guard lock(*mutex_);
  ScratchDir scratch;
  const fs::path out = invoke(input, scratch.path);
  RgbImage result;
  try {
    result = read_png_rgb(out);
  } catch (const Error& e) {
    fail(ErrorCode::kBackend, std::string("external backend produced unreadable output: ") + e.what());
  }
  if (result.width != input.width || result.height != input.height)
    fail(ErrorCode::kBackend, "external backend changed image dimensions");
  return result;
}

SegmentMask ExternalClient::run_mask(const RgbImage& input) const {
  std::lock_guard lock(*mutex_);
  ScratchDir scratch;
  const fs::path out = invoke(input, scratch.path);
  int w = 0;
  int h = 0;
  std::vector<std::uint16_t> values;
  try {
    values = read_png16(out, w, h);
  } catch (const Error& e) {
    fail(ErrorCode::kBackend, std::string("external segmenter produced unreadable output: ") + e.what());
  }
  if (w != input.width || h != input.height) fail(ErrorCode::kBackend, "external segmenter changed mask dimensions");
  SegmentMask mask(w, h);
  std::copy(values.begin(), values.end(), mask.ids.begin());
  return mask;
}

SegmenterHandle SegmenterHandle::oracle() { return {}; }

SegmenterHandle SegmenterHandle::external(ExternalBackend backend) {
  SegmenterHandle h;
  h.kind_ = Kind::kExternal;
  h.client_.emplace(std::move(backend));
  return h;
}

SegmentMask SegmenterHandle::segment(const RgbImage& rgb, const SegmentMask* ground_truth) const {
  if (kind_ == Kind::kOracle) {
    require(ground_truth != nullptr, "oracle segmenter requires a ground-truth mask");
    require(ground_truth->width == rgb.width && ground_truth->height == rgb.height,
            "oracle segmenter: ground-truth size mismatch");
    return *ground_truth;
  }
  return client_->run_mask(rgb);
}

DeblurrerHandle DeblurrerHandle::identity() { return {}; }

DeblurrerHandle DeblurrerHandle::unsharp(UnsharpParams params) {
  require(params.sigma > 0.0 && params.kernel >= 1 && params.kernel % 2 == 1 && params.amount >= 0.0,
          "unsharp: invalid parameters");
  DeblurrerHandle h;
  h.kind_ = Kind::kUnsharp;
  h.unsharp_ = params;
  return h;
}

DeblurrerHandle DeblurrerHandle::external(ExternalBackend backend) {
  DeblurrerHandle h;
  h.kind_ = Kind::kExternal;
  h.client_.emplace(std::move(backend));
  return h;
}

RgbImage DeblurrerHandle::deblur(const RgbImage& rgb) const {
  switch (kind_) {
    case Kind::kIdentity: return rgb;
    case Kind::kExternal: return client_->run_rgb(rgb);
    case Kind::kUnsharp: break;
  }
  const FloatImage source = to_float(rgb);
  const FloatImage blurred = gaussian_blur(source, unsharp_.sigma, unsharp_.kernel);
  FloatImage sharp = source;
  for (std::size_t i = 0; i < sharp.data.size(); ++i)
    sharp.data[i] += unsharp_.amount * (source.data[i] - blurred.data[i]);
  return to_bytes(sharp);
}

std::string to_string(DeblurrerHandle::Kind kind) {
  switch (kind) {
    case DeblurrerHandle::Kind::kIdentity: return "identity";
    case DeblurrerHandle::Kind::kUnsharp: return "unsharp";
    case DeblurrerHandle::Kind::kExternal: return "external";
  }
  return "identity";
}

DeblurrerHandle::Kind parse_deblur_kind(const std::string& name) {
  if (name == "identity") return DeblurrerHandle::Kind::kIdentity;
  if (name == "unsharp") return DeblurrerHandle::Kind::kUnsharp;
  if (name == "external") return DeblurrerHandle::Kind::kExternal;
  fail(ErrorCode::kInvalidArgument, "unknown deblur kind '" + name + "'");
}

}  // namespace crossia::perception
