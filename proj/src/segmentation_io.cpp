#include "segmentation_io.hpp"

#include <algorithm>
#include <charconv>
#include <fcntl.h>
#include <signal.h>
#include <sstream>
#include <sys/wait.h>
#include <thread>
#include <unistd.h>

#include "error.hpp"

namespace cac::seg {

namespace fs = std::filesystem;

std::int64_t CalciumMask::voxel_count() const {
    std::int64_t n = 0;
    for (const auto& r : runs) n += r.length;
    return n;
}

bool CalciumMask::contains(std::int64_t index) const {
    auto it = std::upper_bound(runs.begin(), runs.end(), index,
                               [](std::int64_t i, const Run& r) { return i < r.start; });
    if (it == runs.begin()) return false;
    --it;
    return index < it->start + it->length;
}

std::vector<std::uint8_t> CalciumMask::to_bitmap() const {
    std::vector<std::uint8_t> bits(static_cast<std::size_t>(dims.total()), 0);
    for (const auto& r : runs)
        std::fill_n(bits.begin() + r.start, r.length, std::uint8_t{1});
    return bits;
}

std::vector<std::int64_t> CalciumMask::positive_slices() const {
    std::vector<std::int64_t> out;
    const std::int64_t per_slice = dims.rows * dims.cols;
    if (per_slice == 0) return out;
    for (const auto& r : runs) {
        std::int64_t first = r.start / per_slice;
        std::int64_t last = (r.start + r.length - 1) / per_slice;
        for (std::int64_t z = first; z <= last; ++z)
            if (out.empty() || out.back() != z) out.push_back(z);
    }
    return out;
}

std::vector<Run> canonicalize_runs(std::vector<Run> runs, std::int64_t total) {
    for (const auto& r : runs) {
        if (r.length <= 0 || r.start < 0 || r.start > total - r.length)
            fail(ErrorCode::MalformedRuns, "run (" + std::to_string(r.start) + "," + std::to_string(r.length) +
                                               ") outside [0, " + std::to_string(total) + ")");
    }
    std::sort(runs.begin(), runs.end(), [](const Run& a, const Run& b) { return a.start < b.start; });
    std::vector<Run> out;
    out.reserve(runs.size());
    for (const auto& r : runs) {
        if (!out.empty()) {
            Run& last = out.back();
            const std::int64_t end = last.start + last.length;
            if (r.start < end)
                fail(ErrorCode::MalformedRuns, "runs overlap at index " + std::to_string(r.start));
            if (r.start == end) {
                last.length += r.length;
                continue;
            }
        }
        out.push_back(r);
    }
    return out;
}

CalciumMask mask_from_bitmap(std::span<const std::uint8_t> bitmap, Dims dims, std::string study_uid,
                             std::string series_uid) {
    if (static_cast<std::int64_t>(bitmap.size()) != dims.total())
        fail(ErrorCode::DimsMismatch, "bitmap size does not match dims");
    CalciumMask m{std::move(study_uid), std::move(series_uid), dims, {}};
    std::int64_t i = 0;
    const auto n = static_cast<std::int64_t>(bitmap.size());
    while (i < n) {
        if (!bitmap[static_cast<std::size_t>(i)]) {
            ++i;
            continue;
        }
        std::int64_t j = i;
        while (j < n && bitmap[static_cast<std::size_t>(j)]) ++j;
        m.runs.push_back({i, j - i});
        i = j;
    }
    return m;
}

std::string serialize_mask(const CalciumMask& mask) {
    std::string out = "CACMASK 1 " + mask.study_uid + " " + mask.series_uid + " " +
                      std::to_string(mask.dims.slices) + " " + std::to_string(mask.dims.rows) + " " +
                      std::to_string(mask.dims.cols) + "\n";
    for (const auto& r : mask.runs) {
        out += std::to_string(r.start);
        out += ' ';
        out += std::to_string(r.length);
        out += '\n';
    }
    return out;
}

namespace {

std::int64_t parse_i64(std::string_view tok, std::size_t lineno) {
    std::int64_t v = 0;
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc{} || p != tok.data() + tok.size())
        fail(ErrorCode::MalformedRuns, "mask line " + std::to_string(lineno) + ": bad integer '" +
                                           std::string(tok) + "'");
    return v;
}

std::vector<std::string_view> tokens(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
        std::size_t j = i;
        while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
        if (j > i) out.push_back(line.substr(i, j - i));
        i = j;
    }
    return out;
}

}  // namespace

CalciumMask parse_mask(std::string_view text) {
    CalciumMask m;
    std::size_t pos = 0, lineno = 0;
    bool header = false;
    while (pos < text.size()) {
        auto nl = text.find('\n', pos);
        std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        pos = nl == std::string_view::npos ? text.size() : nl + 1;
        ++lineno;
        auto tok = tokens(line);
        if (tok.empty()) continue;
        if (!header) {
            if (tok.size() != 7 || tok[0] != "CACMASK")
                fail(ErrorCode::MalformedRuns, "missing CACMASK header");
            if (tok[1] != "1") fail(ErrorCode::MalformedRuns, "unsupported mask version " + std::string(tok[1]));
            m.study_uid = tok[2];
            m.series_uid = tok[3];
            m.dims = {parse_i64(tok[4], lineno), parse_i64(tok[5], lineno), parse_i64(tok[6], lineno)};
            if (m.dims.slices <= 0 || m.dims.rows <= 0 || m.dims.cols <= 0)
                fail(ErrorCode::MalformedRuns, "non-positive mask dims");
            header = true;
            continue;
        }
        if (tok.size() != 2)
            fail(ErrorCode::MalformedRuns, "mask line " + std::to_string(lineno) + ": expected 'start length'");
        m.runs.push_back({parse_i64(tok[0], lineno), parse_i64(tok[1], lineno)});
    }
    if (!header) fail(ErrorCode::MalformedRuns, "empty mask file");
    return m;
}

CalciumMask validate_mask(CalciumMask mask, const CtVolume& volume) {
    if (mask.dims != volume.dims) {
        auto fmt = [](const Dims& d) {
            return "(" + std::to_string(d.slices) + "," + std::to_string(d.rows) + "," + std::to_string(d.cols) + ")";
        };
        fail(ErrorCode::DimsMismatch, "mask dims " + fmt(mask.dims) + " vs volume " + fmt(volume.dims));
    }
    if (mask.study_uid != volume.meta.study_uid || mask.series_uid != volume.meta.series_uid)
        fail(ErrorCode::UidMismatch, "mask " + mask.study_uid + "/" + mask.series_uid + " does not belong to " +
                                         volume.meta.study_uid + "/" + volume.meta.series_uid);
    mask.runs = canonicalize_runs(std::move(mask.runs), mask.dims.total());
    return mask;
}

CalciumMask load_mask(const fs::path& path, const CtVolume& volume) {
    return validate_mask(parse_mask(read_file(path)), volume);
}

void save_mask(const CalciumMask& mask, const fs::path& path) { write_file(path, serialize_mask(mask)); }

RoiBox RoiBox::parse(std::string_view csv) {
    auto parts = split(csv, ',');
    if (parts.size() != 6) fail(ErrorCode::InvalidArgument, "roi must be z0,y0,x0,z1,y1,x1");
    std::int64_t v[6];
    for (int i = 0; i < 6; ++i) {
        auto t = trim(parts[static_cast<std::size_t>(i)]);
        auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v[i]);
        if (ec != std::errc{} || p != t.data() + t.size())
            fail(ErrorCode::InvalidArgument, "roi component '" + t + "' is not an integer");
    }
    return {v[0], v[1], v[2], v[3], v[4], v[5]};
}

CalciumMask baseline_segment(const CtVolume& volume, const RoiBox& roi, int hu_threshold) {
    const auto& d = volume.dims;
    if (roi.z0 < 0 || roi.y0 < 0 || roi.x0 < 0 || roi.z1 > d.slices || roi.y1 > d.rows || roi.x1 > d.cols ||
        roi.z0 > roi.z1 || roi.y0 > roi.y1 || roi.x0 > roi.x1)
        fail(ErrorCode::RoiOutOfBounds, "roi outside volume bounds");
    std::vector<Run> runs;
    for (std::int64_t z = roi.z0; z < roi.z1; ++z)
        for (std::int64_t y = roi.y0; y < roi.y1; ++y)
            for (std::int64_t x = roi.x0; x < roi.x1; ++x)
                if (volume.at(z, y, x) >= hu_threshold) {
                    const auto idx = volume.index(z, y, x);
                    if (!runs.empty() && runs.back().start + runs.back().length == idx)
                        ++runs.back().length;
                    else
                        runs.push_back({idx, 1});
                }
    return {volume.meta.study_uid, volume.meta.series_uid, d, std::move(runs)};
}

namespace {

std::string shell_quote(const std::string& s) {
    std::string out = "'";
    for (char c : s) {
        if (c == '\'') out += "'\\''";
        else out += c;
    }
    return out + "'";
}

void replace_all(std::string& s, const std::string& from, const std::string& to) {
    for (std::size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size()))
        s.replace(pos, from.size(), to);
}

struct ProcessResult {
    int exit_code = -1;
    bool timed_out = false;
};

ProcessResult run_shell(const std::string& command, const fs::path& log_path, std::chrono::seconds timeout) {
    pid_t pid = fork();
    if (pid < 0) fail(ErrorCode::RunnerFailed, "fork failed");
    if (pid == 0) {
        int fd = ::open(log_path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
        if (fd >= 0) {
            ::dup2(fd, STDOUT_FILENO);
            ::dup2(fd, STDERR_FILENO);
            ::close(fd);
        }
        ::setpgid(0, 0);
        ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
        ::_exit(127);
    }
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    int status = 0;
    while (true) {
        pid_t r = ::waitpid(pid, &status, WNOHANG);
        if (r == pid) break;
        if (r < 0) fail(ErrorCode::RunnerFailed, "waitpid failed");
        if (std::chrono::steady_clock::now() > deadline) {
            ::kill(-pid, SIGKILL);
            ::kill(pid, SIGKILL);
            ::waitpid(pid, &status, 0);
            return {-1, true};
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
    if (WIFEXITED(status)) return {WEXITSTATUS(status), false};
    return {128 + (WIFSIGNALED(status) ? WTERMSIG(status) : 0), false};
}

std::string tail_of(const fs::path& p, std::size_t max_bytes = 4096) {
    std::error_code ec;
    if (!fs::exists(p, ec)) return {};
    std::string s = read_file(p);
    if (s.size() > max_bytes) s = s.substr(s.size() - max_bytes);
    return s;
}

}  // namespace

CalciumMask run_external_model(const CtVolume& volume, const ExternalRunnerConfig& runner) {
    if (trim(runner.command).empty()) fail(ErrorCode::InvalidArgument, "runner command is empty");
    fs::path scratch = runner.scratch_dir;
    if (scratch.empty())
        scratch = fs::temp_directory_path() / ("cac-runner-" + std::to_string(::getpid()) + "-" +
                                               volume.meta.study_uid);
    const fs::path input_dir = scratch / "input";
    const fs::path output_mask = scratch / "output.cacmask";
    const fs::path log_path = scratch / "runner.log";
    std::error_code ec;
    fs::remove_all(scratch, ec);
    fs::create_directories(input_dir);
    ingest::write_fixture(volume, input_dir);

    std::string cmd = runner.command;
    if (cmd.find("{input}") == std::string::npos && cmd.find("{output}") == std::string::npos) {
        cmd += " " + shell_quote(input_dir.string()) + " " + shell_quote(output_mask.string());
    } else {
        replace_all(cmd, "{input}", shell_quote(input_dir.string()));
        replace_all(cmd, "{output}", shell_quote(output_mask.string()));
    }

    auto res = run_shell(cmd, log_path, runner.timeout);
    if (res.timed_out)
        fail(ErrorCode::RunnerFailed, "runner timed out after " + std::to_string(runner.timeout.count()) +
                                          " s; output:\n" + tail_of(log_path));
    if (res.exit_code != 0)
        fail(ErrorCode::RunnerFailed, "runner exited with status " + std::to_string(res.exit_code) +
                                          "; output:\n" + tail_of(log_path));
    if (!fs::exists(output_mask, ec))
        fail(ErrorCode::InvalidModelOutput, "runner produced no mask at " + output_mask.string());
    try {
        return load_mask(output_mask, volume);
    } catch (const Error& e) {
        fail(ErrorCode::InvalidModelOutput, std::string(error_code_name(e.code())) + ": " + e.what());
    }
}

}  // namespace cac::seg
