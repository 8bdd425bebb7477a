// SPDX-License-Identifier: Apache-2.0
//
// rfslam - direct radio SLAM on raw multi-antenna RF samples
// ------------------------------------------------------------------------

#include "rfslam/io.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

namespace rfslam
{
    static_assert(std::endian::native == std::endian::little, "binary containers assume a little-endian host");

    namespace
    {
        constexpr char kMagic[4] = {'R', 'F', 'S', 'L'};
        constexpr char kMagicNN[4] = {'R', 'F', 'N', 'N'};
        constexpr char kTagImu[4] = {'I', 'M', 'U', 'O'};
        constexpr char kTagTruth[4] = {'T', 'R', 'T', 'H'};
        constexpr char kTagSnap[4] = {'S', 'N', 'A', 'P'};

        class Writer
        {
        public:
            explicit Writer(const std::filesystem::path &p) : path_(p), os_(p, std::ios::binary | std::ios::trunc)
            {
                if (!os_)
                    throw IoError("cannot open " + p.string() + " for writing");
            }
            void raw(const void *d, std::size_t n) { os_.write(static_cast<const char *>(d), static_cast<std::streamsize>(n)); }
            void tag(const char (&t)[4]) { raw(t, 4); }
            void u32(std::uint32_t v) { raw(&v, 4); }
            void u64(std::uint64_t v) { raw(&v, 8); }
            void i32(std::int32_t v) { raw(&v, 4); }
            void u8(std::uint8_t v) { raw(&v, 1); }
            void f64(double v) { raw(&v, 8); }
            void vec2(const Vec2 &v)
            {
                f64(v.x());
                f64(v.y());
            }
            void f64s(const std::vector<double> &v)
            {
                u64(v.size());
                for (double x : v)
                    f64(x);
            }
            void close()
            {
                os_.flush();
                if (!os_)
                    throw IoError("write to " + path_.string() + " failed");
            }

        private:
            std::filesystem::path path_;
            std::ofstream os_;
        };

        class Reader
        {
        public:
            explicit Reader(const std::filesystem::path &p) : path_(p), is_(p, std::ios::binary)
            {
                if (!is_)
                    throw IoError("cannot open " + p.string());
            }
            void raw(void *d, std::size_t n)
            {
                is_.read(static_cast<char *>(d), static_cast<std::streamsize>(n));
                if (static_cast<std::size_t>(is_.gcount()) != n)
                    throw IoError(path_.string() + ": unexpected end of file");
            }
            bool at_end() { return is_.peek() == std::char_traits<char>::eof(); }
            void expect(const char (&t)[4], const char *what)
            {
                char b[4];
                raw(b, 4);
                if (std::memcmp(b, t, 4) != 0)
                    throw IoError(path_.string() + ": bad " + what + " tag");
            }
            bool try_tag(const char (&t)[4])
            {
                if (at_end())
                    return false;
                char b[4];
                raw(b, 4);
                if (std::memcmp(b, t, 4) != 0)
                    throw IoError(path_.string() + ": unknown trailing section");
                return true;
            }
            std::uint32_t u32()
            {
                std::uint32_t v;
                raw(&v, 4);
                return v;
            }
            std::uint64_t u64()
            {
                std::uint64_t v;
                raw(&v, 8);
                return v;
            }
            std::int32_t i32()
            {
                std::int32_t v;
                raw(&v, 4);
                return v;
            }
            std::uint8_t u8()
            {
                std::uint8_t v;
                raw(&v, 1);
                return v;
            }
            double f64()
            {
                double v;
                raw(&v, 8);
                return v;
            }
            Vec2 vec2()
            {
                const double x = f64();
                return Vec2(x, f64());
            }
            std::vector<double> f64s(std::uint64_t limit = 1ull << 32)
            {
                const std::uint64_t n = u64();
                if (n > limit)
                    throw IoError(path_.string() + ": implausible array length");
                std::vector<double> v(n);
                for (auto &x : v)
                    x = f64();
                return v;
            }
            const std::filesystem::path &path() const { return path_; }

        private:
            std::filesystem::path path_;
            std::ifstream is_;
        };

        struct Header
        {
            std::uint32_t J, K, Mf, Ma;
        };

        void write_header(Writer &w, Header h)
        {
            w.tag(kMagic);
            w.u32(kFormatVersion);
            w.u32(h.J);
            w.u32(h.K);
            w.u32(h.Mf);
            w.u32(h.Ma);
        }

        Header read_header(Reader &r)
        {
            r.expect(kMagic, "magic");
            const std::uint32_t v = r.u32();
            if (v != kFormatVersion)
                throw IoError(r.path().string() + ": unsupported format version " + std::to_string(v));
            Header h{r.u32(), r.u32(), r.u32(), r.u32()};
            if (h.J > (1u << 16) || h.K > (1u << 24) || h.Mf > (1u << 20) || h.Ma > (1u << 12))
                throw IoError(r.path().string() + ": implausible header dimensions");
            return h;
        }

        void write_state(Writer &w, const MtState &x)
        {
            w.vec2(x.position);
            w.vec2(x.velocity);
            w.f64(x.orientation);
        }

        MtState read_state(Reader &r)
        {
            MtState x;
            x.position = r.vec2();
            x.velocity = r.vec2();
            x.orientation = r.f64();
            return x;
        }

        void write_estimate(Writer &w, const StateEstimates &e)
        {
            write_state(w, e.mt);
            w.f64s(e.visibility);
            std::vector<double> g;
            for (const auto &v : e.los_variance)
                g.push_back(v ? *v : std::numeric_limits<double>::quiet_NaN());
            w.f64s(g);
            w.f64s(e.noise_variance);
        }

        StateEstimates read_estimate(Reader &r)
        {
            StateEstimates e;
            e.mt = read_state(r);
            e.visibility = r.f64s();
            for (double g : r.f64s())
                e.los_variance.push_back(std::isnan(g) ? std::nullopt : std::optional<double>(g));
            e.noise_variance = r.f64s();
            return e;
        }

        std::string fmt(double v)
        {
            if (std::isnan(v))
                return "nan";
            char buf[64];
            const auto res = std::to_chars(buf, buf + sizeof(buf), v);
            return std::string(buf, res.ptr);
        }

        double parse_double(const std::string &s, const std::filesystem::path &p)
        {
            if (s == "nan" || s.empty())
                return std::numeric_limits<double>::quiet_NaN();
            double v = 0.0;
            const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
            if (res.ec != std::errc() || res.ptr != s.data() + s.size())
                throw IoError(p.string() + ": bad number '" + s + "'");
            return v;
        }

        std::ofstream open_text(const std::filesystem::path &p)
        {
            std::ofstream os(p, std::ios::trunc);
            if (!os)
                throw IoError("cannot open " + p.string() + " for writing");
            return os;
        }
    } // namespace

    void write_measurements(const std::filesystem::path &path, const MeasurementFile &m)
    {
        const std::uint32_t K = static_cast<std::uint32_t>(m.frames.size());
        const std::uint32_t J = K ? static_cast<std::uint32_t>(m.frames[0].z.size()) : 0;
        const Eigen::Index M = static_cast<Eigen::Index>(m.num_freq) * m.num_antennas;
        if (!m.imu.empty() && m.imu.size() != K)
            throw InvalidArgument("write_measurements: one orientation reading per frame is required");
        Writer w(path);
        write_header(w, {J, K, static_cast<std::uint32_t>(m.num_freq), static_cast<std::uint32_t>(m.num_antennas)});
        for (const auto &f : m.frames)
        {
            if (f.z.size() != J)
                throw InvalidArgument("write_measurements: inconsistent BS count");
            for (const auto &z : f.z)
            {
                if (z.size() != M)
                    throw InvalidArgument("write_measurements: vector length differs from M_f * M_a");
                for (Eigen::Index i = 0; i < M; ++i)
                {
                    w.f64(z[i].real());
                    w.f64(z[i].imag());
                }
            }
        }
        if (!m.imu.empty())
        {
            w.tag(kTagImu);
            for (double v : m.imu)
                w.f64(v);
        }
        w.close();
    }

    MeasurementFile read_measurements(const std::filesystem::path &path)
    {
        Reader r(path);
        const Header h = read_header(r);
        MeasurementFile m;
        m.num_freq = static_cast<int>(h.Mf);
        m.num_antennas = static_cast<int>(h.Ma);
        const Eigen::Index M = static_cast<Eigen::Index>(h.Mf) * h.Ma;
        m.frames.resize(h.K);
        for (std::uint32_t k = 0; k < h.K; ++k)
        {
            m.frames[k].k = static_cast<int>(k + 1);
            m.frames[k].z.resize(h.J);
            for (std::uint32_t j = 0; j < h.J; ++j)
            {
                CVec z(M);
                for (Eigen::Index i = 0; i < M; ++i)
                {
                    const double re = r.f64();
                    z[i] = cplx(re, r.f64());
                }
                m.frames[k].z[j] = std::move(z);
            }
        }
        if (r.try_tag(kTagImu))
        {
            m.imu.resize(h.K);
            for (auto &v : m.imu)
                v = r.f64();
        }
        if (!r.at_end())
            throw IoError(path.string() + ": trailing bytes");
        return m;
    }

    void write_truth(const std::filesystem::path &path, const TruthFile &t)
    {
        const auto &tr = t.truth;
        const std::uint32_t J = static_cast<std::uint32_t>(t.bs_positions.size());
        const std::uint32_t K = static_cast<std::uint32_t>(tr.steps());
        if (tr.states.size() != K + 1 || tr.imu_orientation.size() != K + 1 || tr.anchors.size() != J)
            throw InvalidArgument("write_truth: inconsistent truth dimensions");
        Writer w(path);
        write_header(w, {J, K, static_cast<std::uint32_t>(t.num_freq), static_cast<std::uint32_t>(t.num_antennas)});
        w.tag(kTagTruth);
        for (const auto &p : t.bs_positions)
            w.vec2(p);
        for (const auto &x : tr.states)
            write_state(w, x);
        for (double v : tr.imu_orientation)
            w.f64(v);
        for (const auto &row : tr.los_flags)
        {
            if (row.size() != J)
                throw InvalidArgument("write_truth: inconsistent LOS flag row");
            for (char f : row)
                w.u8(f ? 1 : 0);
        }
        for (const auto &list : tr.anchors)
        {
            w.u32(static_cast<std::uint32_t>(list.size()));
            for (const auto &a : list)
            {
                w.vec2(a.position);
                w.f64(a.variance);
                w.i32(a.wall);
            }
        }
        w.close();
    }

    TruthFile read_truth(const std::filesystem::path &path)
    {
        Reader r(path);
        const Header h = read_header(r);
        r.expect(kTagTruth, "truth");
        TruthFile t;
        t.num_freq = static_cast<int>(h.Mf);
        t.num_antennas = static_cast<int>(h.Ma);
        for (std::uint32_t j = 0; j < h.J; ++j)
            t.bs_positions.push_back(r.vec2());
        auto &tr = t.truth;
        for (std::uint32_t k = 0; k <= h.K; ++k)
            tr.states.push_back(read_state(r));
        for (std::uint32_t k = 0; k <= h.K; ++k)
            tr.imu_orientation.push_back(r.f64());
        tr.los_flags.assign(h.K, std::vector<char>(h.J));
        for (auto &row : tr.los_flags)
            for (auto &f : row)
                f = static_cast<char>(r.u8());
        tr.anchors.resize(h.J);
        for (auto &list : tr.anchors)
        {
            const std::uint32_t n = r.u32();
            if (n > (1u << 16))
                throw IoError(path.string() + ": implausible anchor count");
            for (std::uint32_t i = 0; i < n; ++i)
            {
                VirtualAnchor a;
                a.position = r.vec2();
                a.variance = r.f64();
                a.wall = r.i32();
                list.push_back(a);
            }
        }
        if (!r.at_end())
            throw IoError(path.string() + ": trailing bytes");
        return t;
    }

    void write_snapshots(const std::filesystem::path &path, const SnapshotFile &s)
    {
        const std::uint32_t J = s.snapshots.empty() ? 0 : static_cast<std::uint32_t>(s.snapshots[0].visibility.size());
        Writer w(path);
        write_header(w, {J, static_cast<std::uint32_t>(s.snapshots.size()), static_cast<std::uint32_t>(s.num_freq),
                         static_cast<std::uint32_t>(s.num_antennas)});
        w.tag(kTagSnap);
        for (const auto &sn : s.snapshots)
        {
            if (sn.visibility.size() != J || sn.los_variance.size() != J || sn.noise_variance.size() != J)
                throw InvalidArgument("write_snapshots: inconsistent BS count");
            w.i32(sn.k);
            w.u64(sn.position.size());
            for (std::size_t p = 0; p < sn.position.size(); ++p)
            {
                w.vec2(sn.position[p]);
                w.f64(sn.orientation[p]);
            }
            for (std::uint32_t j = 0; j < J; ++j)
            {
                w.f64s(sn.los_variance[j]);
                w.f64s(sn.noise_variance[j]);
            }
            w.f64s(sn.visibility);
            write_estimate(w, sn.estimate);
        }
        w.close();
    }

    SnapshotFile read_snapshots(const std::filesystem::path &path)
    {
        Reader r(path);
        const Header h = read_header(r);
        r.expect(kTagSnap, "snapshot");
        SnapshotFile s;
        s.num_freq = static_cast<int>(h.Mf);
        s.num_antennas = static_cast<int>(h.Ma);
        for (std::uint32_t i = 0; i < h.K; ++i)
        {
            BeliefSnapshot sn;
            sn.k = r.i32();
            const std::uint64_t n = r.u64();
            if (n > (1u << 24))
                throw IoError(path.string() + ": implausible particle count");
            for (std::uint64_t p = 0; p < n; ++p)
            {
                sn.position.push_back(r.vec2());
                sn.orientation.push_back(r.f64());
            }
            sn.los_variance.resize(h.J);
            sn.noise_variance.resize(h.J);
            for (std::uint32_t j = 0; j < h.J; ++j)
            {
                sn.los_variance[j] = r.f64s();
                sn.noise_variance[j] = r.f64s();
            }
            sn.visibility = r.f64s();
            sn.estimate = read_estimate(r);
            s.snapshots.push_back(std::move(sn));
        }
        if (!r.at_end())
            throw IoError(path.string() + ": trailing bytes");
        return s;
    }

    void write_checkpoint(const std::filesystem::path &path, const Checkpoint &c)
    {
        Writer w(path);
        w.tag(kMagicNN);
        w.u32(kFormatVersion);
        const auto &a = c.map.architecture();
        w.u32(static_cast<std::uint32_t>(a.num_features));
        w.u32(static_cast<std::uint32_t>(a.num_encodings));
        w.u32(static_cast<std::uint32_t>(a.hidden1));
        w.u32(static_cast<std::uint32_t>(a.hidden2));
        w.f64(a.position_scale);
        w.f64(a.variance_scale);
        w.vec2(c.map.frame().center);
        w.f64(c.map.frame().extent);
        const Vec theta = c.map.parameters();
        w.u64(static_cast<std::uint64_t>(theta.size()));
        for (Eigen::Index i = 0; i < theta.size(); ++i)
            w.f64(theta[i]);
        w.u8(c.adam ? 1 : 0);
        if (c.adam)
        {
            const AdamState &s = *c.adam;
            if (s.m.size() != theta.size() || s.v.size() != theta.size())
                throw InvalidArgument("write_checkpoint: Adam state length mismatch");
            w.u64(static_cast<std::uint64_t>(s.step));
            w.f64(s.lr);
            w.f64(s.beta1);
            w.f64(s.beta2);
            w.f64(s.eps);
            for (Eigen::Index i = 0; i < theta.size(); ++i)
                w.f64(s.m[i]);
            for (Eigen::Index i = 0; i < theta.size(); ++i)
                w.f64(s.v[i]);
        }
        w.u8(c.calibration ? 1 : 0);
        if (c.calibration)
        {
            w.u32(static_cast<std::uint32_t>(c.num_freq));
            w.u32(static_cast<std::uint32_t>(c.num_antennas));
            const Vec chi = c.calibration->to_vector();
            if (chi.size() != Calibration::parameter_count(c.num_freq, c.num_antennas))
                throw InvalidArgument("write_checkpoint: calibration dimensions mismatch");
            for (Eigen::Index i = 0; i < chi.size(); ++i)
                w.f64(chi[i]);
        }
        w.close();
    }

    Checkpoint read_checkpoint(const std::filesystem::path &path)
    {
        Reader r(path);
        r.expect(kMagicNN, "magic");
        const std::uint32_t v = r.u32();
        if (v != kFormatVersion)
            throw IoError(path.string() + ": unsupported checkpoint version " + std::to_string(v));
        MapArchitecture a;
        a.num_features = static_cast<int>(r.u32());
        a.num_encodings = static_cast<int>(r.u32());
        a.hidden1 = static_cast<int>(r.u32());
        a.hidden2 = static_cast<int>(r.u32());
        a.position_scale = r.f64();
        a.variance_scale = r.f64();
        if (a.num_features > 4096 || a.num_encodings > 64 || a.hidden1 > 65536 || a.hidden2 > 65536)
            throw IoError(path.string() + ": implausible architecture");
        EncodingFrame f;
        f.center = r.vec2();
        f.extent = r.f64();
        const std::uint64_t n = r.u64();
        try
        {
            a.validate();
        }
        catch (const InvalidArgument &e)
        {
            throw IoError(path.string() + ": " + e.what());
        }
        if (n != static_cast<std::uint64_t>(MlpParams::parameter_count(a)))
            throw IoError(path.string() + ": parameter count does not match the architecture");
        Vec theta(static_cast<Eigen::Index>(n));
        for (Eigen::Index i = 0; i < theta.size(); ++i)
            theta[i] = r.f64();
        MlpParams p = MlpParams::zeros(a);
        p.set_flat(theta);
        Checkpoint c;
        c.map = NeuralMap(a, f, std::move(p));
        if (r.u8())
        {
            AdamState s;
            s.step = static_cast<long>(r.u64());
            s.lr = r.f64();
            s.beta1 = r.f64();
            s.beta2 = r.f64();
            s.eps = r.f64();
            s.m.resize(theta.size());
            s.v.resize(theta.size());
            for (Eigen::Index i = 0; i < theta.size(); ++i)
                s.m[i] = r.f64();
            for (Eigen::Index i = 0; i < theta.size(); ++i)
                s.v[i] = r.f64();
            c.adam = std::move(s);
        }
        if (r.u8())
        {
            c.num_freq = static_cast<int>(r.u32());
            c.num_antennas = static_cast<int>(r.u32());
            if (c.num_freq > (1 << 20) || c.num_antennas > (1 << 12))
                throw IoError(path.string() + ": implausible calibration dimensions");
            Vec chi(Calibration::parameter_count(c.num_freq, c.num_antennas));
            for (Eigen::Index i = 0; i < chi.size(); ++i)
                chi[i] = r.f64();
            c.calibration = Calibration::from_vector(chi, c.num_freq, c.num_antennas);
        }
        if (!r.at_end())
            throw IoError(path.string() + ": trailing bytes");
        return c;
    }

    void write_track_csv(const std::filesystem::path &path, const std::vector<StateEstimates> &est)
    {
        std::ofstream os = open_text(path);
        const std::size_t J = est.empty() ? 0 : est.front().visibility.size();
        os << "k,x,y,vx,vy,o";
        for (std::size_t j = 0; j < J; ++j)
            os << ",p_" << j + 1;
        for (std::size_t j = 0; j < J; ++j)
            os << ",gamma_" << j + 1;
        for (std::size_t j = 0; j < J; ++j)
            os << ",eta_" << j + 1;
        os << '\n';
        for (std::size_t k = 0; k < est.size(); ++k)
        {
            const auto &e = est[k];
            os << k << ',' << fmt(e.mt.position.x()) << ',' << fmt(e.mt.position.y()) << ',' << fmt(e.mt.velocity.x())
               << ',' << fmt(e.mt.velocity.y()) << ',' << fmt(e.mt.orientation);
            for (double p : e.visibility)
                os << ',' << fmt(p);
            for (const auto &g : e.los_variance)
                os << ',' << (g ? fmt(*g) : std::string("nan"));
            for (double v : e.noise_variance)
                os << ',' << fmt(v);
            os << '\n';
        }
        if (!os)
            throw IoError("write to " + path.string() + " failed");
    }

    TrackCsv read_track_csv(const std::filesystem::path &path)
    {
        std::ifstream is(path);
        if (!is)
            throw IoError("cannot open " + path.string());
        std::string line;
        if (!std::getline(is, line))
            throw IoError(path.string() + ": empty file");
        std::vector<std::string> head;
        {
            std::stringstream ss(line);
            std::string c;
            while (std::getline(ss, c, ','))
                head.push_back(c);
        }
        if (head.size() < 6 || head[0] != "k" || head[1] != "x" || head[2] != "y")
            throw IoError(path.string() + ": not a track file");
        std::vector<std::size_t> pcols;
        for (std::size_t i = 0; i < head.size(); ++i)
            if (head[i].rfind("p_", 0) == 0)
                pcols.push_back(i);
        TrackCsv t;
        while (std::getline(is, line))
        {
            if (line.empty())
                continue;
            std::vector<std::string> cells;
            std::stringstream ss(line);
            std::string c;
            while (std::getline(ss, c, ','))
                cells.push_back(c);
            if (cells.size() != head.size())
                throw IoError(path.string() + ": row with wrong column count");
            const int k = static_cast<int>(parse_double(cells[0], path));
            if (k == 0)
                continue;
            t.k.push_back(k);
            t.position.emplace_back(parse_double(cells[1], path), parse_double(cells[2], path));
            std::vector<double> vis;
            for (std::size_t i : pcols)
                vis.push_back(parse_double(cells[i], path));
            t.visibility.push_back(std::move(vis));
        }
        return t;
    }

    void write_training_log_csv(const std::filesystem::path &path, const std::vector<TrainingLogRow> &rows)
    {
        std::ofstream os = open_text(path);
        os << "iter,phase,Q_before,Q_after,grad_norm,seconds\n";
        for (const auto &r : rows)
            os << r.iteration << ',' << r.phase << ',' << fmt(r.q_before) << ',' << fmt(r.q_after) << ','
               << fmt(r.grad_norm) << ',' << fmt(r.seconds) << '\n';
        if (!os)
            throw IoError("write to " + path.string() + " failed");
    }

} // namespace rfslam
