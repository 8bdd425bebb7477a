// SPDX-License-Identifier: Apache-2.0
//
// rfslam - direct radio SLAM on raw multi-antenna RF samples
// ------------------------------------------------------------------------

#include "rfslam/config.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace rfslam
{
    namespace
    {
        using nlohmann::json;

        // Checked view of one JSON object; finish() rejects keys that were never read
        class Obj
        {
        public:
            Obj(const json &j, std::string path) : j_(j), path_(std::move(path))
            {
                if (!j_.is_object())
                    fail("expected an object");
            }

            [[noreturn]] void fail(const std::string &msg, const std::string &key = "") const
            {
                throw ConfigError(field(key) + ": " + msg);
            }
            std::string field(const std::string &key) const
            {
                if (key.empty())
                    return path_.empty() ? "<root>" : path_;
                return path_.empty() ? key : path_ + "." + key;
            }
            bool has(const std::string &key)
            {
                seen_.insert(key);
                return j_.contains(key) && !j_.at(key).is_null();
            }
            const json &at(const std::string &key)
            {
                seen_.insert(key);
                if (!j_.contains(key))
                    fail("missing required field", key);
                return j_.at(key);
            }

            double num(const std::string &key, double def)
            {
                seen_.insert(key);
                return has(key) ? as_num(j_.at(key), field(key)) : def;
            }
            double num(const std::string &key) { return as_num(at(key), field(key)); }
            long integer(const std::string &key, long def)
            {
                seen_.insert(key);
                if (!has(key))
                    return def;
                const json &v = j_.at(key);
                if (!v.is_number_integer())
                    fail("expected an integer", key);
                return v.get<long>();
            }
            bool boolean(const std::string &key, bool def)
            {
                seen_.insert(key);
                if (!has(key))
                    return def;
                const json &v = j_.at(key);
                if (!v.is_boolean())
                    fail("expected true or false", key);
                return v.get<bool>();
            }
            std::string str(const std::string &key, const std::string &def)
            {
                seen_.insert(key);
                if (!has(key))
                    return def;
                const json &v = j_.at(key);
                if (!v.is_string())
                    fail("expected a string", key);
                return v.get<std::string>();
            }
            Vec2 vec2(const std::string &key) { return as_vec2(at(key), field(key)); }
            std::optional<Vec2> opt_vec2(const std::string &key)
            {
                seen_.insert(key);
                if (!has(key))
                    return std::nullopt;
                return as_vec2(j_.at(key), field(key));
            }
            std::optional<Obj> child(const std::string &key)
            {
                seen_.insert(key);
                if (!has(key))
                    return std::nullopt;
                return Obj(j_.at(key), field(key));
            }
            void finish() const
            {
                for (auto it = j_.begin(); it != j_.end(); ++it)
                    if (!seen_.count(it.key()))
                        fail("unknown key", it.key());
            }

            static double as_num(const json &v, const std::string &where)
            {
                if (v.is_string() && v.get<std::string>() == "inf")
                    return std::numeric_limits<double>::infinity();
                if (!v.is_number())
                    throw ConfigError(where + ": expected a number");
                return v.get<double>();
            }
            static Vec2 as_vec2(const json &v, const std::string &where)
            {
                if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
                    throw ConfigError(where + ": expected a [x, y] pair");
                return Vec2(v[0].get<double>(), v[1].get<double>());
            }

        private:
            const json &j_;
            std::string path_;
            std::set<std::string> seen_;
        };

        std::vector<Vec2> vec2_list(const json &v, const std::string &where)
        {
            if (!v.is_array())
                throw ConfigError(where + ": expected an array of [x, y] pairs");
            std::vector<Vec2> out;
            for (std::size_t i = 0; i < v.size(); ++i)
                out.push_back(Obj::as_vec2(v[i], where + "[" + std::to_string(i) + "]"));
            return out;
        }

        // Scalar (broadcast to every BS) or one value per BS
        std::vector<double> per_bs(const json &v, const std::string &where, std::size_t J)
        {
            if (v.is_number())
                return std::vector<double>(J, v.get<double>());
            if (!v.is_array() || v.size() != J)
                throw ConfigError(where + ": expected a number or one number per BS");
            std::vector<double> out;
            for (std::size_t i = 0; i < v.size(); ++i)
                out.push_back(Obj::as_num(v[i], where + "[" + std::to_string(i) + "]"));
            return out;
        }

        template <typename F>
        void wrap(const std::string &where, F &&f)
        {
            try
            {
                f();
            }
            catch (const InvalidArgument &e)
            {
                throw ConfigError(where + ": " + e.what());
            }
        }

        double mean(const std::vector<double> &v)
        {
            double s = 0.0;
            for (double x : v)
                s += x;
            return v.empty() ? 1.0 : s / v.size();
        }

        void parse_signal(Obj o, RunConfig &c)
        {
            c.carrier_hz = o.num("carrier_hz", c.carrier_hz);
            c.bandwidth_hz = o.num("bandwidth_hz", c.bandwidth_hz);
            c.spacing_hz = o.num("spacing_hz", c.spacing_hz);
            const double half_lambda = 0.5 * kSpeedOfLight / c.carrier_hz;
            if (auto a = o.child("array"))
            {
                const std::string type = a->str("type", "ura");
                const double sp = a->num("spacing_m", half_lambda);
                wrap(a->field("type"), [&]
                     {
                    if (type == "ura")
                        c.array = ArrayGeometry::uniform_rectangular(static_cast<int>(a->integer("nx", 2)),
                                                                     static_cast<int>(a->integer("ny", 2)), sp);
                    else if (type == "ula")
                        c.array = ArrayGeometry::uniform_linear(static_cast<int>(a->integer("n", 4)), sp);
                    else if (type == "custom")
                        c.array = ArrayGeometry::from_positions(vec2_list(a->at("positions"), a->field("positions")));
                    else
                        throw ConfigError(a->field("type") + ": expected \"ura\", \"ula\" or \"custom\""); });
                a->finish();
            }
            else
                c.array = ArrayGeometry::uniform_rectangular(2, 2, half_lambda);
            o.finish();
        }

        void parse_scenario(Obj o, RunConfig &c)
        {
            Scenario &s = c.scenario;
            s.bs_positions = vec2_list(o.at("bs_positions"), o.field("bs_positions"));
            const std::size_t J = s.bs_positions.size();
            if (J == 0)
                o.fail("at least one BS is required", "bs_positions");
            s.walls.clear();
            if (o.has("walls"))
            {
                const json &w = o.at("walls");
                if (!w.is_array())
                    o.fail("expected an array", "walls");
                for (std::size_t i = 0; i < w.size(); ++i)
                {
                    Obj wo(w[i], o.field("walls") + "[" + std::to_string(i) + "]");
                    s.walls.push_back({wo.vec2("a"), wo.vec2("b")});
                    wo.finish();
                }
            }
            {
                Obj t(o.at("trajectory"), o.field("trajectory"));
                s.trajectory.waypoints = vec2_list(t.at("waypoints"), t.field("waypoints"));
                s.trajectory.speed = t.num("speed", 1.0);
                s.trajectory.dt = t.num("dt", 1.0);
                s.trajectory.steps = static_cast<int>(t.integer("steps", 100));
                s.trajectory.sigma_o = t.num("sigma_o", 0.02);
                t.finish();
            }
            s.blockage.assign(J, {});
            if (o.has("blockage"))
            {
                const json &b = o.at("blockage");
                if (!b.is_array() || b.size() > J)
                    o.fail("expected one interval list per BS", "blockage");
                for (std::size_t j = 0; j < b.size(); ++j)
                {
                    const std::string where = o.field("blockage") + "[" + std::to_string(j) + "]";
                    if (!b[j].is_array())
                        throw ConfigError(where + ": expected an array of intervals");
                    for (std::size_t i = 0; i < b[j].size(); ++i)
                    {
                        Obj iv(b[j][i], where + "[" + std::to_string(i) + "]");
                        s.blockage[j].push_back({static_cast<int>(iv.integer("start", 1)), static_cast<int>(iv.integer("end", 1))});
                        iv.finish();
                    }
                }
            }
            s.los_gamma = per_bs(o.at("los_gamma"), o.field("los_gamma"), J);
            s.noise_eta = per_bs(o.at("noise_eta"), o.field("noise_eta"), J);
            s.mpc_gamma_scale = o.num("mpc_gamma_scale", 0.25);
            s.mpc_distance_scaling = o.boolean("mpc_distance_scaling", false);
            o.finish();
        }

        void parse_models(std::optional<Obj> o, RunConfig &c)
        {
            FilterModels &m = c.models;
            const Scenario &s = c.scenario;
            const auto &wp = s.trajectory.waypoints;
            const Vec2 d0 = wp.size() >= 2 ? Vec2(wp[1] - wp[0]) : Vec2(Vec2::UnitX());
            const double heading = std::atan2(d0.y(), d0.x());
            m.motion.dt = s.trajectory.dt;
            m.los.appearance = {mean(s.los_gamma), 2.0};
            m.priors.position_mean = wp.empty() ? Vec2(Vec2::Zero()) : wp[0];
            m.priors.velocity_mean = s.trajectory.speed * Vec2(std::cos(heading), std::sin(heading));
            m.priors.orientation_mean = heading;
            m.priors.los_variance = {mean(s.los_gamma), 2.0};
            m.priors.noise_variance = {mean(s.noise_eta), 10.0};
            if (!o)
                return;
            if (auto mo = o->child("motion"))
            {
                m.motion.dt = mo->num("dt", m.motion.dt);
                m.motion.sigma_acc = mo->num("sigma_acc", m.motion.sigma_acc);
                m.motion.sigma_o_walk = mo->num("sigma_o_walk", m.motion.sigma_o_walk);
                m.motion.sigma_o_meas = mo->num("sigma_o_meas", m.motion.sigma_o_meas);
                mo->finish();
            }
            if (auto lo = o->child("los"))
            {
                m.los.p_a = lo->num("p_a", m.los.p_a);
                m.los.p_v = lo->num("p_v", m.los.p_v);
                m.los.shape_gamma = lo->num("c_gamma", m.los.shape_gamma);
                m.los.appearance.mean = lo->num("appearance_mean", m.los.appearance.mean);
                m.los.appearance.shape = lo->num("appearance_shape", m.los.appearance.shape);
                m.los.dummy_mean = lo->num("dummy_mean", m.los.dummy_mean);
                lo->finish();
            }
            if (auto no = o->child("noise"))
            {
                m.noise.shape_eta = no->num("c_eta", m.noise.shape_eta);
                no->finish();
            }
            if (auto po = o->child("priors"))
            {
                auto &p = m.priors;
                if (auto v = po->opt_vec2("position_mean"))
                    p.position_mean = *v;
                p.position_std = po->num("position_std", p.position_std);
                if (auto v = po->opt_vec2("velocity_mean"))
                    p.velocity_mean = *v;
                p.velocity_std = po->num("velocity_std", p.velocity_std);
                p.orientation_mean = po->num("orientation_mean", p.orientation_mean);
                p.orientation_std = po->num("orientation_std", p.orientation_std);
                p.los_probability = po->num("los_probability", p.los_probability);
                p.los_variance.mean = po->num("los_variance_mean", p.los_variance.mean);
                p.los_variance.shape = po->num("los_variance_shape", p.los_variance.shape);
                p.noise_variance.mean = po->num("noise_variance_mean", p.noise_variance.mean);
                p.noise_variance.shape = po->num("noise_variance_shape", p.noise_variance.shape);
                po->finish();
            }
            o->finish();
        }

        std::size_t line_of(const std::string &text, std::size_t byte, std::size_t &col)
        {
            std::size_t line = 1, last = 0;
            for (std::size_t i = 0; i < std::min(byte, text.size()); ++i)
                if (text[i] == '\n')
                {
                    ++line;
                    last = i + 1;
                }
            col = byte >= last ? byte - last : 0;
            return line;
        }
    } // namespace

    RadioModel RunConfig::radio_model() const
    {
        RadioModel m;
        try
        {
            m = RadioModel::uncalibrated(SignalConfig::create(carrier_hz, bandwidth_hz, spacing_hz, array.size()), array);
        }
        catch (const InvalidArgument &e)
        {
            throw ConfigError(std::string("signal: ") + e.what());
        }
        return m;
    }

    BoundingBox RunConfig::scatter_bounds() const
    {
        return map_bounds ? *map_bounds : scene_bounds(scenario).expanded(map_margin);
    }

    EncodingFrame RunConfig::encoding_frame() const { return EncodingFrame::from_bounds(scene_bounds(scenario)); }

    void RunConfig::set_seed(std::uint64_t s)
    {
        seed = s;
        scenario.seed = s;
        filter.seed = s;
    }

    RunConfig parse_config(const std::string &text, const std::string &source)
    {
        json j;
        try
        {
            j = json::parse(text);
        }
        catch (const json::parse_error &e)
        {
            std::size_t col = 0;
            const std::size_t line = line_of(text, e.byte > 0 ? e.byte - 1 : 0, col);
            throw ConfigError(source + ":" + std::to_string(line) + ":" + std::to_string(col + 1) + ": JSON syntax error");
        }
        RunConfig c;
        Obj root(j, "");
        const long seed = root.integer("seed", 1);
        if (seed < 0)
            root.fail("must be non-negative", "seed");
        c.threads = static_cast<int>(root.integer("threads", 0));
        if (auto s = root.child("signal"))
            parse_signal(*s, c);
        else
            c.array = ArrayGeometry::uniform_rectangular(2, 2, 0.5 * kSpeedOfLight / c.carrier_hz);
        parse_scenario(Obj(root.at("scenario"), "scenario"), c);
        if (auto f = root.child("filter"))
        {
            c.filter.num_particles = static_cast<int>(f->integer("particles", c.filter.num_particles));
            c.filter.num_birth = static_cast<int>(f->integer("birth", c.filter.num_birth));
            c.filter.subset_size = static_cast<int>(f->integer("subset", c.filter.subset_size));
            f->finish();
        }
        parse_models(root.child("models"), c);
        if (auto m = root.child("map"))
        {
            c.map.num_features = static_cast<int>(m->integer("features", c.map.num_features));
            c.map.num_encodings = static_cast<int>(m->integer("encodings", c.map.num_encodings));
            c.map.hidden1 = static_cast<int>(m->integer("hidden1", c.map.hidden1));
            c.map.hidden2 = static_cast<int>(m->integer("hidden2", c.map.hidden2));
            c.map.position_scale = m->num("position_scale", c.map.position_scale);
            c.map.variance_scale = m->num("variance_scale", c.map.variance_scale);
            c.map_margin = m->num("margin", c.map_margin);
            if (auto b = m->child("bounds"))
            {
                c.map_bounds = BoundingBox{b->vec2("lo"), b->vec2("hi")};
                b->finish();
            }
            m->finish();
        }
        if (auto l = root.child("learn"))
        {
            auto &L = c.learn;
            L.segment_k0 = static_cast<int>(l->integer("segment_k0", L.segment_k0));
            L.em_iterations = static_cast<int>(l->integer("em_iterations", L.em_iterations));
            L.adam_steps = static_cast<int>(l->integer("adam_steps", L.adam_steps));
            L.use_subset = l->boolean("use_subset", L.use_subset);
            L.use_mmse_points = l->boolean("mmse_points", L.use_mmse_points);
            L.supervised = l->boolean("supervised", L.supervised);
            L.learn_chi = l->boolean("learn_chi", L.learn_chi);
            L.init_search = l->boolean("init_search", L.init_search);
            L.search_spacing = l->num("search_spacing", L.search_spacing);
            L.lr_theta = l->num("lr_theta", L.lr_theta);
            L.lr_chi = l->num("lr_chi", L.lr_chi);
            l->finish();
        }
        root.finish();
        c.set_seed(static_cast<std::uint64_t>(seed));

        wrap("scenario", [&] { c.scenario.validate(); });
        wrap("filter", [&] { c.filter.validate(); });
        wrap("models", [&] { c.models.validate(); });
        wrap("map", [&] { c.map.validate(); });
        wrap("learn", [&] { c.learn.validate(); });
        if (c.threads < 0)
            throw ConfigError("threads: must be non-negative");
        c.radio_model();
        return c;
    }

    RunConfig load_config(const std::filesystem::path &path)
    {
        std::ifstream is(path);
        if (!is)
            throw ConfigError("cannot open config file " + path.string());
        std::stringstream ss;
        ss << is.rdbuf();
        return parse_config(ss.str(), path.string());
    }

} // namespace rfslam
