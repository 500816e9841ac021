# report_generator.py
from datetime import datetime
import os

from reportlab.lib.pagesizes import A4
from reportlab.pdfgen import canvas

LINE = 18


def generate_pdf(summary, output_path, config_name="custom"):
    """One-page PDF with the outcome of a simulation run."""
    directory = os.path.dirname(output_path)
    if directory:
        os.makedirs(directory, exist_ok=True)

    c = canvas.Canvas(output_path, pagesize=A4)
    _, height = A4
    y = height - 50

    def line(text, font="Helvetica", size=11):
        nonlocal y
        if y < 60:
            c.showPage()
            y = height - 50
        c.setFont(font, size)
        c.drawString(50, y, text)
        y -= LINE

    line("Emergency Detection Run Report", "Helvetica-Bold", 14)
    line(f"Configuration: {config_name}    Seed: {summary.seed}")
    line(f"Generated: {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}")
    y -= LINE // 2

    line(f"Ground truth: {', '.join(summary.ground_truth) or 'none'}", "Helvetica-Bold", 12)
    line(f"Accepted: {', '.join(summary.accepted) or 'none'}")
    line(f"False positives: {', '.join(summary.false_positives) or 'none'}    "
         f"False negatives: {', '.join(summary.false_negatives) or 'none'}")
    for scenario, latency in sorted(summary.detection_latency_ms.items()):
        shown = "not detected" if latency is None else f"{latency / 1000:.1f} s"
        line(f"Detection latency {scenario}: {shown}")
    y -= LINE // 2

    line("Sessions", "Helvetica-Bold", 12)
    if not summary.sessions:
        line("no voting session was decided")
    for s in summary.sessions:
        verdict = "ACCEPT" if s["decision"] else "reject"
        extra = " (rebalanced)" if s["rebalanced"] else ""
        line(f"{s['time_ms'] / 1000:7.1f} s  {s['session']:>8}  {s['scenario']:<11} "
             f"total={s['total']:.3f}  {verdict}{extra}", "Courier", 10)
    y -= LINE // 2

    msgs = summary.messages
    line("Messages", "Helvetica-Bold", 12)
    line(f"sent {msgs['sent']}  delivered {msgs['delivered']}  in flight {msgs['in_flight']}")
    line("dropped: " + ", ".join(f"{k} {v}" for k, v in sorted(msgs["dropped"].items())))
    y -= LINE // 2

    line("Energy", "Helvetica-Bold", 12)
    for node, e in sorted(summary.energy.items(), key=lambda kv: int(kv[0])):
        line(f"node {node}: {e['total_mJ'] / 1000:.1f} J, average {e['average_mW']:.1f} mW",
             "Courier", 10)

    c.showPage()
    c.save()
    return output_path
