//! Subcommand bodies. Each returns staged output bytes; nothing is written
//! here.

use std::fs;
use std::path::PathBuf;

use plantiv_core::estimator::{balance_test, gdp_growth, EstimationReport};
use plantiv_core::exposure::InstrumentMatrix;
use plantiv_core::io;
use plantiv_core::panel::{
    filter_subsample, summarize, CountyYearRow, PanelVariable, RegionMap, SubsampleSelector,
};
use plantiv_core::pipeline::{self, Inputs};
use plantiv_core::synth::generate;
use plantiv_core::{Error, Result};

use crate::config::{InputKind, InputPaths};
use crate::manifest::FileDigest;
use crate::{CliError, Command, Outcome, Session};

pub const SIMULATED_CONFIG_FILE: &str = "run_config.toml";

pub fn dispatch(session: &Session) -> std::result::Result<Outcome, CliError> {
    let outcome = match session.command {
        Command::Simulate => simulate(session),
        Command::BuildExposure => build_exposure(session),
        Command::BuildPanel => build_panel(session),
        Command::Estimate => estimate(session),
        Command::BalanceTest => balance(session),
        Command::Summarize => summary(session),
        Command::LivesSaved => lives_saved(session),
        Command::ValidateConfig => Ok(Outcome {
            stdout: session.config.canonical(),
            ..Outcome::default()
        }),
    }?;
    Ok(outcome)
}

fn to_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

/// Reads configured inputs, recording a digest per file.
struct Loader<'a> {
    session: &'a Session,
    digests: Vec<FileDigest>,
}

impl<'a> Loader<'a> {
    fn new(session: &'a Session) -> Self {
        Self {
            session,
            digests: Vec::new(),
        }
    }

    fn read(&mut self, kind: InputKind) -> Result<(Vec<u8>, String)> {
        let rel = self.session.config.inputs.get(kind).ok_or_else(|| {
            Error::InvalidInput(format!("inputs.{} is not configured", kind.key()))
        })?;
        let full = self.session.input_path(rel);
        let bytes = fs::read(&full).map_err(|e| Error::Io {
            path: full.display().to_string(),
            message: e.to_string(),
        })?;
        let label = rel.display().to_string();
        if !self.digests.iter().any(|d| d.path == label) {
            self.digests.push(FileDigest::of(label.clone(), &bytes));
        }
        Ok((bytes, full.display().to_string()))
    }

    fn inputs(&mut self, kinds: &[InputKind]) -> Result<Inputs> {
        let mut inputs = Inputs::default();
        for &k in kinds {
            let (bytes, src) = self.read(k)?;
            let r = bytes.as_slice();
            match k {
                InputKind::Plants => inputs.plants = io::parse_plants(r, &src)?,
                InputKind::Counties => inputs.counties = io::parse_counties(r, &src)?,
                InputKind::Mortality => inputs.mortality = io::parse_mortality(r, &src)?,
                InputKind::Weather => inputs.weather = io::parse_weather(r, &src)?,
                InputKind::Grid => inputs.grid = io::parse_grid(r, &src)?,
                InputKind::Socio => inputs.socio = io::parse_socio(r, &src)?,
                InputKind::Regions | InputKind::Instruments | InputKind::Panel => {}
            }
        }
        Ok(inputs)
    }

    fn instruments(&mut self) -> Result<InstrumentMatrix> {
        let cfg = &self.session.config;
        if cfg.inputs.instruments.is_some() {
            let (bytes, src) = self.read(InputKind::Instruments)?;
            return io::parse_instruments(bytes.as_slice(), &src);
        }
        let inputs = self.inputs(&[InputKind::Plants, InputKind::Counties, InputKind::Weather])?;
        pipeline::build_exposure(&inputs, cfg.years.range(), &cfg.exposure.grid()?)
    }

    fn panel_rows(&mut self) -> Result<Vec<CountyYearRow>> {
        let cfg = &self.session.config;
        if cfg.inputs.panel.is_some() {
            let (bytes, src) = self.read(InputKind::Panel)?;
            let years = cfg.years.range();
            let rows = io::parse_panel(bytes.as_slice(), &src)?;
            return Ok(rows
                .into_iter()
                .filter(|r| years.contains(&r.year))
                .collect());
        }
        let inputs = self.inputs(&[
            InputKind::Counties,
            InputKind::Mortality,
            InputKind::Weather,
            InputKind::Grid,
            InputKind::Socio,
        ])?;
        Ok(pipeline::build_panel(&inputs, cfg.years.range(), &cfg.baseline.options())?.rows)
    }

    fn regions(&mut self) -> Result<RegionMap> {
        let (bytes, src) = self.read(InputKind::Regions)?;
        io::parse_regions(bytes.as_slice(), &src)
    }
}

fn simulate(session: &Session) -> std::result::Result<Outcome, CliError> {
    let cfg = &session.config;
    let seed = cfg.seed.expect("validated seed");
    let bundle = generate(&cfg.dgp(seed))?;
    let inp = &bundle.inputs;
    let truth_rows = bundle.truth.iter().map(|t| {
        vec![
            t.county_id.clone(),
            t.year.to_string(),
            t.so2_planted.to_string(),
            t.pm25_planted.to_string(),
            t.confounder.to_string(),
        ]
    });
    let files = vec![
        (
            "plants.csv".to_string(),
            to_bytes(|b| io::write_plants(b, &inp.plants))?,
        ),
        (
            "counties.csv".into(),
            to_bytes(|b| io::write_counties(b, &inp.counties))?,
        ),
        (
            "mortality.csv".into(),
            to_bytes(|b| io::write_mortality(b, &inp.mortality))?,
        ),
        (
            "weather.csv".into(),
            to_bytes(|b| io::write_weather(b, &inp.weather))?,
        ),
        (
            "grid.csv".into(),
            to_bytes(|b| io::write_grid(b, &inp.grid))?,
        ),
        (
            "socio.csv".into(),
            to_bytes(|b| io::write_socio(b, &inp.socio))?,
        ),
        (
            "regions.csv".into(),
            to_bytes(|b| io::write_regions(b, &bundle.regions))?,
        ),
        (
            "truth.csv".into(),
            to_bytes(|b| {
                io::write_table(
                    b,
                    &[
                        "county_id",
                        "year",
                        "so2_planted",
                        "pm25_planted",
                        "confounder",
                    ],
                    truth_rows,
                )
            })?,
        ),
    ];

    let mut follow_up = cfg.clone();
    follow_up.inputs = InputPaths {
        plants: Some(PathBuf::from("plants.csv")),
        counties: Some(PathBuf::from("counties.csv")),
        mortality: Some(PathBuf::from("mortality.csv")),
        weather: Some(PathBuf::from("weather.csv")),
        grid: Some(PathBuf::from("grid.csv")),
        socio: Some(PathBuf::from("socio.csv")),
        regions: Some(PathBuf::from("regions.csv")),
        instruments: None,
        panel: None,
    };
    follow_up.output.dir = PathBuf::from("results");
    follow_up.output.jobs = None;
    let mut files = files;
    files.push((
        SIMULATED_CONFIG_FILE.into(),
        follow_up.canonical().into_bytes(),
    ));
    Ok(Outcome {
        files,
        ..Outcome::default()
    })
}

fn build_exposure(session: &Session) -> std::result::Result<Outcome, CliError> {
    let mut loader = Loader::new(session);
    let m = loader.instruments()?;
    Ok(Outcome {
        files: vec![(
            "instruments.csv".into(),
            to_bytes(|b| io::write_instruments(b, &m))?,
        )],
        inputs: loader.digests,
        stdout: format!("{} rows x {} instruments\n", m.n_rows(), m.n_cols()),
    })
}

fn build_panel(session: &Session) -> std::result::Result<Outcome, CliError> {
    let cfg = &session.config;
    let mut loader = Loader::new(session);
    let inputs = loader.inputs(&[
        InputKind::Counties,
        InputKind::Mortality,
        InputKind::Weather,
        InputKind::Grid,
        InputKind::Socio,
    ])?;
    let built = pipeline::build_panel(&inputs, cfg.years.range(), &cfg.baseline.options())?;
    let stdout = format!(
        "{} county-years; join: {:?}; {} skipped for incomplete weather\n",
        built.rows.len(),
        built.join,
        built.incomplete_weather.len()
    );
    Ok(Outcome {
        files: vec![
            (
                "panel.csv".into(),
                to_bytes(|b| io::write_panel(b, &built.rows))?,
            ),
            (
                "county_pollution.csv".into(),
                to_bytes(|b| io::write_county_pollution(b, &built.pollution))?,
            ),
        ],
        inputs: loader.digests,
        stdout,
    })
}

fn estimate(session: &Session) -> std::result::Result<Outcome, CliError> {
    let cfg = &session.config;
    let spec = cfg.model_spec();
    let kind = session.estimator.unwrap_or(cfg.model.estimator);
    let selectors = cfg.subsample_selectors();
    let mut loader = Loader::new(session);
    let instruments = loader.instruments()?;
    let rows = loader.panel_rows()?;
    let regions = if selectors.iter().any(|s| *s != SubsampleSelector::All) {
        loader.regions()?
    } else {
        RegionMap::new()
    };

    let mut files = Vec::new();
    let mut stdout = String::new();
    for sel in selectors {
        let label = sel.label();
        let sub = filter_subsample(&rows, sel, &regions)?;
        let design = pipeline::design(&sub, &instruments, &spec)?;
        let est = pipeline::run_estimator(&design, kind, &spec)?;
        let report = EstimationReport::new(&est, &design, &label);
        let text = report.to_text();
        stdout.push_str(&text);
        files.push((format!("report_{label}.txt"), text.into_bytes()));
        files.push((
            format!("report_{label}.kv"),
            report.to_key_value().into_bytes(),
        ));
        files.push((
            format!("first_stage_{label}.csv"),
            report.first_stage_table().into_bytes(),
        ));
    }
    Ok(Outcome {
        files,
        inputs: loader.digests,
        stdout,
    })
}

fn balance(session: &Session) -> std::result::Result<Outcome, CliError> {
    let mut loader = Loader::new(session);
    let instruments = loader.instruments()?;
    let socio = loader.inputs(&[InputKind::Socio])?.socio;
    let rows = balance_test(&instruments, &gdp_growth(&socio))?;
    let table = rows.iter().map(|r| {
        let (rv, t, p) = match &r.result {
            Some(c) => (c.r.to_string(), c.t_stat.to_string(), c.p_value.to_string()),
            None => Default::default(),
        };
        vec![r.instrument.clone(), r.n.to_string(), rv, t, p]
    });
    let bytes =
        to_bytes(|b| io::write_table(b, &["instrument", "n", "r", "t_stat", "p_value"], table))?;
    let flagged = rows
        .iter()
        .filter(|r| r.result.as_ref().is_some_and(|c| c.p_value < 0.05))
        .count();
    Ok(Outcome {
        files: vec![("balance.csv".into(), bytes)],
        inputs: loader.digests,
        stdout: format!(
            "{} instruments tested, {flagged} with p < 0.05\n",
            rows.len()
        ),
    })
}

fn summary(session: &Session) -> std::result::Result<Outcome, CliError> {
    let mut loader = Loader::new(session);
    let rows = loader.panel_rows()?;
    let stats = summarize(&rows, &PanelVariable::ALL);
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    let table = stats.iter().map(|s| {
        vec![
            s.year.to_string(),
            s.variable.name().to_string(),
            s.n.to_string(),
            opt(s.mean),
            opt(s.sd),
        ]
    });
    let bytes = to_bytes(|b| io::write_table(b, &["year", "variable", "n", "mean", "sd"], table))?;
    Ok(Outcome {
        files: vec![("summary.csv".into(), bytes)],
        inputs: loader.digests,
        stdout: format!("{} county-years summarized\n", rows.len()),
    })
}

fn lives_saved(session: &Session) -> std::result::Result<Outcome, CliError> {
    let l = &session.config.lives_saved;
    let lives = plantiv_core::estimator::lives_saved(
        l.theta_so2,
        l.theta_pm,
        l.delta_so2,
        l.delta_pm,
        l.population_u5,
    );
    let text = format!(
        "theta_so2={}\ntheta_pm={}\ndelta_so2={}\ndelta_pm={}\npopulation_u5={}\nlives_saved={}\n",
        l.theta_so2, l.theta_pm, l.delta_so2, l.delta_pm, l.population_u5, lives
    );
    Ok(Outcome {
        files: vec![("lives_saved.txt".into(), text.clone().into_bytes())],
        inputs: Vec::new(),
        stdout: text,
    })
}
