// temporary feasibility probe (deleted before release)
use nalgebra::{DMatrix, DVector};
use slowfast::bif::{pitchfork_experiment, PitchforkOptions};
use slowfast::exitlab::reentry_fraction;
use slowfast::exitlab::ExitOptions;
use slowfast::flow::{self, OrbitOptions};
use slowfast::model::{catalog_entry, NoiseParams};
use slowfast::sde::{self, mean_std};

fn v1(x: f64) -> DVector<f64> {
    DVector::from_element(1, x)
}

fn main() {
    let t0 = std::time::Instant::now();

    // --- criterion 3: covariance consistency ---
    {
        let entry = catalog_entry("linear1d").unwrap();
        let sys = &entry.system;
        let params = NoiseParams::new(0.01, 0.05, 0.5).unwrap();
        let opts = OrbitOptions {
            fast_dt_cap: Some(params.eps / 40.0),
            ..Default::default()
        };
        let orbit =
            flow::integrate_reduced(sys, &params, &v1(1.0), &v1(0.0), 1.0, &opts).unwrap();
        let track = flow::covariance_evolution(
            &orbit,
            &DMatrix::zeros(1, 1),
            &DMatrix::zeros(1, 1),
            &DMatrix::zeros(1, 1),
        )
        .unwrap();
        let xt = track.x_t.last().unwrap()[(0, 0)];
        let zt = track.z_t.last().unwrap()[(0, 0)];
        let yt = track.y_t.last().unwrap()[(0, 0)];
        let n = 100_000usize;
        let sums: Vec<(f64, f64, f64)> = sde::run_ensemble(n, 11, |_i, stream| {
            let mut last = (0.0, 0.0);
            sde::simulate_linearized_with(
                &orbit,
                &params,
                &v1(0.0),
                &v1(0.0),
                &stream,
                |_j, _t, xi, eta| {
                    last = (xi[0], eta[0]);
                },
            )?;
            Ok((last.0 * last.0, last.0 * last.1, last.1 * last.1))
        })
        .unwrap();
        let s2 = params.sigma * params.sigma;
        let (mx, _) = mean_std(&sums.iter().map(|s| s.0).collect::<Vec<_>>());
        let (mz, _) = mean_std(&sums.iter().map(|s| s.1).collect::<Vec<_>>());
        let (my, _) = mean_std(&sums.iter().map(|s| s.2).collect::<Vec<_>>());
        println!(
            "C3 ({:.0}s): X {:.4e} vs {:.4e} (rel {:.3})  Z {:.4e} vs {:.4e} (rel {:.3})  Y {:.4e} vs {:.4e} (rel {:.3})",
            t0.elapsed().as_secs_f64(),
            mx / s2, xt, (mx / s2 - xt).abs() / xt,
            mz / s2, zt, (mz / s2 - zt).abs() / zt,
            my / s2, yt, (my / s2 - yt).abs() / yt
        );
    }

    // --- criterion 5: re-entry ---
    {
        let entry = catalog_entry("linear1d").unwrap();
        let params = NoiseParams::new(0.01, 0.01, 0.0).unwrap();
        let h = 6.0 * params.sigma;
        let deadline = 10.0 * params.eps * h.ln().abs();
        let frac = reentry_fraction(
            &entry.system,
            &params,
            0.04,
            h,
            deadline,
            1000,
            13,
            &ExitOptions {
                y0: Some(v1(1.0)),
                ..Default::default()
            },
        )
        .unwrap();
        println!(
            "C5 ({:.0}s): deadline {:.4}, fraction inside = {:.4}",
            t0.elapsed().as_secs_f64(),
            deadline,
            frac
        );
    }

    // --- criterion 6: slow spreading ratio ---
    {
        let entry = catalog_entry("linear1d").unwrap();
        let sys = &entry.system;
        let mut stds = Vec::new();
        for rho in [0.2, 0.4] {
            let params = NoiseParams::new(1e-3, 0.02, rho).unwrap();
            let (dt, _, n_steps) = flow::grid_layout(params.eps, 1.0, &OrbitOptions::default());
            let x0 = v1(1.0 / (1.0 - params.eps));
            let finals: Vec<f64> = sde::run_ensemble(10_000, 17, |_i, stream| {
                let mut yl = 0.0;
                sde::simulate_full_with(
                    sys,
                    &params,
                    &x0,
                    &v1(1.0),
                    n_steps,
                    dt,
                    &stream,
                    |j, _t, _x, y| {
                        if j == n_steps {
                            yl = y[0];
                        }
                    },
                )?;
                Ok(yl - (-1.0f64).exp())
            })
            .unwrap();
            let (_, std) = mean_std(&finals);
            stds.push(std);
        }
        println!(
            "C6 ({:.0}s): std(rho=0.2) = {:.4e}, std(rho=0.4) = {:.4e}, ratio = {:.3}",
            t0.elapsed().as_secs_f64(),
            stds[0],
            stds[1],
            stds[1] / stds[0]
        );
    }

    // --- criteria 8 + 9: pitchfork ---
    {
        let params = NoiseParams::new(1e-3, 1e-3, 0.0).unwrap();
        let opts = PitchforkOptions::default();
        let report = pitchfork_experiment(&params, 2000, 23, &opts).unwrap();
        for w in &report.widths {
            println!(
                "C8: t = {:+.4}  width_hat = {:.4e}  width_pred = {:.4e}",
                w.t, w.width_hat, w.width_pred
            );
        }
        let ratio = report.widths.last().unwrap().width_hat / report.widths[0].width_hat;
        println!(
            "C8 ({:.0}s): width ratio (-0.0625 / -0.25) = {:.3}",
            t0.elapsed().as_secs_f64(),
            ratio
        );
        for e in &report.escapes {
            println!(
                "C9: sigma = {:.1e}  fraction = {:.3}  median = {:.4}  [{:.4}, {:.4}]",
                e.sigma, e.escape_fraction, e.median, e.q25, e.q75
            );
        }
        println!(
            "C9 ({:.0}s): slope = {:.4}, r2 = {:.4}",
            t0.elapsed().as_secs_f64(),
            report.slope,
            report.r2
        );
    }
}
